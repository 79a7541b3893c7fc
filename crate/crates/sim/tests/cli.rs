use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn resus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resus"))
        .args(args)
        .output()
        .unwrap()
}

fn scenario(dir: &Path, text: &str) -> String {
    let p = dir.join("scenario.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_trace_metrics_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path(), "seed = 2\n[noise]\namplitude_ml = 50\n");
    let out = dir.path().join("out");
    let o = resus(&["run", &s, "--out", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(o.stdout.is_empty());
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t_min,true_volume_ml,measured_volume_ml,dose_ml_per_min,cumulative_infused_ml,solver_status"
    );
    assert_eq!(lines.count(), 61);
    let metrics = fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert_eq!(metrics.lines().count(), 8);
    assert!(out.join("config.resolved.toml").exists());
}

#[test]
fn run_is_byte_identical_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(
        dir.path(),
        "controller = \"pid\"\n[noise]\namplitude_ml = 250\n",
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for d in [&a, &b] {
        let o = resus(&[
            "run",
            &s,
            "--seed",
            "9",
            "--out",
            d.to_str().unwrap(),
            "--quiet",
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    let ta = fs::read(a.join("trace.csv")).unwrap();
    assert_eq!(ta, fs::read(b.join("trace.csv")).unwrap());
    let resolved = a.join("config.resolved.toml");
    let o = resus(&[
        "run",
        resolved.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(ta, fs::read(c.join("trace.csv")).unwrap());
}

#[test]
fn montecarlo_summary_is_seed_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(
        dir.path(),
        "controller = \"pid\"\n[noise]\namplitude_ml = 250\n",
    );
    let read = |name: &str, seed: &str| {
        let d = dir.path().join(format!("{name}{seed}"));
        let o = resus(&[
            "montecarlo",
            &s,
            "--runs",
            "5",
            "--seed",
            seed,
            "--out",
            d.to_str().unwrap(),
            "--quiet",
        ]);
        assert_eq!(o.status.code(), Some(0));
        fs::read(d.join("montecarlo_summary.txt")).unwrap()
    };
    assert_eq!(read("x", "3"), read("y", "3"));
    assert_ne!(read("x", "3"), read("x", "4"));
}

#[test]
fn compare_writes_both_traces() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path(), "");
    let out = dir.path().join("out");
    let o = resus(&["compare", &s, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.starts_with("metric"));
    assert_eq!(table.lines().count(), 9);
    for f in [
        "rhc_trace.csv",
        "pid_trace.csv",
        "rhc_metrics.txt",
        "pid_metrics.txt",
        "comparison.txt",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn validate_prints_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path(), "baseline_volume_ml = 4000\n");
    let o = resus(&["validate", &s]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("v_b0 = 4000.0"));
    assert!(text.contains("kp = "));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for text in ["duration_min = 0", "not toml at all [", "mystery = 3"] {
        let s = scenario(dir.path(), text);
        assert_eq!(resus(&["validate", &s]).status.code(), Some(1), "{text}");
        assert_eq!(
            resus(&["run", &s, "--quiet"]).status.code(),
            Some(1),
            "{text}"
        );
    }
    assert_eq!(
        resus(&["run", "/nonexistent/scenario.toml"]).status.code(),
        Some(1)
    );
    assert_eq!(resus(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_with_two() {
    // 600 mL/min of bleeding drains the patient within the hour.
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(
        dir.path(),
        "controller = \"pid\"\n[pid]\nkp = 0\nki = 0\nkd = 0\n\
         [[hemorrhage]]\nstart = 0\nend = 60\nvalue = 600\n",
    );
    let out = dir.path().join("out");
    let o = resus(&["run", &s, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn oracle_suite_passes() {
    let o = resus(&["oracle"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() >= 7);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
}
