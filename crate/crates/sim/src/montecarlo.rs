use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::harness::{run_scenario, HarnessError};
use crate::metrics::Metrics;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation.
    pub stddev: f64,
    /// Runs that contributed a value.
    pub count: usize,
}

impl FieldStats {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            stddev: var.sqrt(),
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub seed: u64,
    pub metrics: Metrics,
    pub min_dose: f64,
    pub held_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub base_seed: u64,
    pub runs: Vec<RunOutcome>,
    /// One entry per [`Metrics::FIELDS`] name; `None` when no run had a value.
    pub stats: Vec<(&'static str, Option<FieldStats>)>,
}

/// Runs `n_runs` episodes with seeds `base_seed..base_seed + n_runs` in
/// parallel. Results are ordered by seed.
pub fn monte_carlo(
    cfg: &ScenarioConfig,
    n_runs: usize,
    base_seed: u64,
) -> Result<MonteCarloSummary, HarnessError> {
    if n_runs == 0 {
        return Err(crate::config::ConfigError::Invalid("runs must be at least 1".into()).into());
    }
    let runs = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i);
            let c = ScenarioConfig {
                seed,
                ..cfg.clone()
            };
            let (trace, metrics) = run_scenario(&c)?;
            Ok(RunOutcome {
                seed,
                metrics,
                min_dose: trace
                    .rows
                    .iter()
                    .map(|r| r.dose_ml_per_min)
                    .fold(f64::INFINITY, f64::min),
                held_steps: trace
                    .rows
                    .iter()
                    .filter(|r| r.solver_status.starts_with("held"))
                    .count(),
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let stats = Metrics::FIELDS
        .iter()
        .enumerate()
        .map(|(i, &name)| {
            let vals: Vec<f64> = runs.iter().filter_map(|r| r.metrics.values()[i]).collect();
            (name, FieldStats::of(&vals))
        })
        .collect();
    Ok(MonteCarloSummary {
        base_seed,
        runs,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_by_hand() {
        let s = FieldStats::of(&[1.0, 3.0]).unwrap();
        assert_eq!(
            (s.mean, s.min, s.max, s.stddev, s.count),
            (2.0, 1.0, 3.0, 1.0, 2)
        );
        assert!(FieldStats::of(&[]).is_none());
    }
}
