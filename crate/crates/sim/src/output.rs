//! Text and CSV renderings. Every number is printed with 17 significant
//! digits so a value read back parses to the same `f64`.

use std::io::{self, Write};

use crate::harness::SimulationTrace;
use crate::metrics::Metrics;
use crate::montecarlo::MonteCarloSummary;

pub const TRACE_HEADER: [&str; 6] = [
    "t_min",
    "true_volume_ml",
    "measured_volume_ml",
    "dose_ml_per_min",
    "cumulative_infused_ml",
    "solver_status",
];

pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "never".to_string(), fmt_num)
}

pub fn write_trace_csv<W: Write>(trace: &SimulationTrace, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in &trace.rows {
        w.write_record([
            fmt_num(r.t_min),
            fmt_num(r.true_volume_ml),
            fmt_num(r.measured_volume_ml),
            fmt_num(r.dose_ml_per_min),
            fmt_num(r.cumulative_infused_ml),
            r.solver_status.clone(),
        ])?;
    }
    w.flush()
}

/// One `name = value` line per field.
pub fn metrics_text(m: &Metrics) -> String {
    Metrics::FIELDS
        .iter()
        .zip(m.values())
        .map(|(name, v)| format!("{name} = {}\n", fmt_opt(v)))
        .collect()
}

/// Side-by-side metrics of two controllers.
pub fn comparison_table(rhc: &Metrics, pid: &Metrics) -> String {
    let mut s = format!("{:<28} {:>24} {:>24}\n", "metric", "rhc", "pid");
    for ((name, a), b) in Metrics::FIELDS.iter().zip(rhc.values()).zip(pid.values()) {
        s += &format!("{name:<28} {:>24} {:>24}\n", fmt_opt(a), fmt_opt(b));
    }
    s
}

pub fn summary_text(s: &MonteCarloSummary) -> String {
    let mut out = format!("runs = {}\nbase_seed = {}\n", s.runs.len(), s.base_seed);
    for (name, st) in &s.stats {
        match st {
            Some(st) => {
                out += &format!("{name}.mean = {}\n", fmt_num(st.mean));
                out += &format!("{name}.min = {}\n", fmt_num(st.min));
                out += &format!("{name}.max = {}\n", fmt_num(st.max));
                out += &format!("{name}.stddev = {}\n", fmt_num(st.stddev));
                out += &format!("{name}.count = {}\n", st.count);
            }
            None => out += &format!("{name}.count = 0\n"),
        }
    }
    out
}

pub fn write_runs_csv<W: Write>(s: &MonteCarloSummary, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["seed"];
    header.extend(Metrics::FIELDS);
    header.extend(["min_dose", "held_steps"]);
    w.write_record(&header)?;
    for r in &s.runs {
        let mut rec = vec![r.seed.to_string()];
        rec.extend(r.metrics.values().into_iter().map(fmt_opt));
        rec.push(fmt_num(r.min_dose));
        rec.push(r.held_steps.to_string());
        w.write_record(&rec)?;
    }
    w.flush()
}
