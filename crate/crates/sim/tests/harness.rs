use resus_sim::output::write_trace_csv;
use resus_sim::{
    monte_carlo, run_scenario, run_with_controller, ControllerKind, PidSettings, ScenarioConfig,
};

fn noiseless() -> ScenarioConfig {
    ScenarioConfig::default()
}

fn csv_bytes(cfg: &ScenarioConfig) -> Vec<u8> {
    let (trace, _) = run_scenario(cfg).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&trace, &mut buf).unwrap();
    buf
}

#[test]
fn default_episode_reaches_target() {
    let (trace, m) = run_scenario(&noiseless()).unwrap();
    assert_eq!(trace.rows.len(), 61);
    assert!(m.terminal_error_pct <= 1.0);
    assert_eq!(m.terminal_volume_ml, trace.rows[60].true_volume_ml);
    assert_eq!(m.total_infused_ml, trace.rows[60].cumulative_infused_ml);
    assert!(trace
        .rows
        .windows(2)
        .all(|w| w[1].cumulative_infused_ml >= w[0].cumulative_infused_ml));
    assert!(trace.rows[..60]
        .iter()
        .all(|r| r.solver_status == "converged"));
    assert_eq!(trace.rows[60].solver_status, "end");
}

#[test]
fn zero_dose_keeps_the_baseline() {
    let cfg = ScenarioConfig {
        controller: ControllerKind::Pid,
        pid: PidSettings {
            kp: Some(0.0),
            ki: Some(0.0),
            kd: Some(0.0),
            ..Default::default()
        },
        ..noiseless()
    };
    let (trace, m) = run_scenario(&cfg).unwrap();
    for r in &trace.rows {
        assert!((r.true_volume_ml - 3940.0).abs() <= 1e-12 * 3940.0);
        assert_eq!(r.dose_ml_per_min, 0.0);
    }
    assert_eq!(m.total_infused_ml, 0.0);
}

#[test]
fn hemorrhage_lowers_volume_without_treatment() {
    let cfg = ScenarioConfig::from_toml(
        "controller = \"pid\"\n[pid]\nkp = 0\nki = 0\nkd = 0\n\
         [[hemorrhage]]\nstart = 0\nend = 30\nvalue = 10\n",
    )
    .unwrap();
    let (trace, _) = run_scenario(&cfg).unwrap();
    assert!(trace
        .rows
        .windows(2)
        .take(30)
        .all(|w| w[1].true_volume_ml < w[0].true_volume_ml));
    assert!(trace.rows[30..]
        .windows(2)
        .all(|w| w[1].true_volume_ml >= w[0].true_volume_ml));
}

#[test]
fn traces_are_bit_identical_for_equal_seeds() {
    let cfg = ScenarioConfig {
        seed: 17,
        noise: resus_core::NoiseModel::uniform(250.0),
        ..noiseless()
    };
    assert_eq!(csv_bytes(&cfg), csv_bytes(&cfg));
    let other = ScenarioConfig {
        seed: 18,
        ..cfg.clone()
    };
    assert_ne!(csv_bytes(&cfg), csv_bytes(&other));
}

#[test]
fn resolved_config_replays_the_trace() {
    let cfg = ScenarioConfig::from_toml(
        "seed = 4\ncontroller = \"pid\"\n[noise]\namplitude_ml = 100\n\
         [[hemorrhage]]\nstart = 5\nend = 12.5\nvalue = 8\n",
    )
    .unwrap();
    let (trace, _) = run_scenario(&cfg).unwrap();
    let replay = ScenarioConfig::from_toml(&trace.config.to_toml().unwrap()).unwrap();
    assert_eq!(csv_bytes(&cfg), csv_bytes(&replay));
}

#[test]
fn pid_uses_tuned_gains_by_default() {
    let (trace, m) = run_with_controller(&noiseless(), ControllerKind::Pid).unwrap();
    assert!(trace.rows[..60].iter().all(|r| r.solver_status == "pid"));
    assert!(m.terminal_error_pct <= 1.0);
}

#[test]
fn single_run_summary_is_that_run() {
    let cfg = ScenarioConfig {
        controller: ControllerKind::Pid,
        noise: resus_core::NoiseModel::uniform(250.0),
        ..noiseless()
    };
    let s = monte_carlo(&cfg, 1, 3).unwrap();
    let (_, m) = run_scenario(&ScenarioConfig { seed: 3, ..cfg }).unwrap();
    assert_eq!(s.runs[0].metrics, m);
    for ((name, st), v) in s.stats.iter().zip(m.values()) {
        match (st, v) {
            (Some(st), Some(v)) => {
                assert_eq!(
                    (st.mean, st.min, st.max, st.stddev),
                    (v, v, v, 0.0),
                    "{name}"
                )
            }
            (None, None) => {}
            _ => panic!("{name}"),
        }
    }
}

#[test]
fn noise_free_batches_ignore_the_seed() {
    let cfg = ScenarioConfig {
        controller: ControllerKind::Pid,
        ..noiseless()
    };
    let s = monte_carlo(&cfg, 4, 100).unwrap();
    assert!(s.runs.windows(2).all(|w| w[0].metrics == w[1].metrics));
    assert_eq!(
        s.runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
        vec![100, 101, 102, 103]
    );
}

#[test]
fn batches_are_seed_reproducible() {
    let cfg = ScenarioConfig {
        noise: resus_core::NoiseModel::uniform(250.0),
        ..noiseless()
    };
    let a = monte_carlo(&cfg, 3, 42).unwrap();
    let b = monte_carlo(&cfg, 3, 42).unwrap();
    assert_eq!(a, b);
    let u_max = cfg.resolve().unwrap().rhc.u_max(&cfg.patient);
    assert!(a
        .runs
        .iter()
        .all(|r| r.min_dose >= 0.0 && r.metrics.max_dose_rate <= u_max));
}

#[test]
fn zero_runs_is_rejected() {
    assert!(monte_carlo(&noiseless(), 0, 0).is_err());
}
