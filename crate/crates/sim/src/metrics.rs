use crate::config::ScenarioConfig;
use crate::harness::TraceRow;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub terminal_volume_ml: f64,
    /// `|V(t_f) - target| / target`, percent.
    pub terminal_error_pct: f64,
    /// First sample time after which every remaining true volume stays
    /// within 2% of the target. `None` means never.
    pub time_to_within_2pct_min: Option<f64>,
    pub peak_volume_ml: f64,
    pub overshoot_pct: f64,
    pub total_infused_ml: f64,
    pub max_dose_rate: f64,
    pub mean_abs_tracking_error_ml: f64,
}

impl Metrics {
    /// Field names in output order.
    pub const FIELDS: [&'static str; 8] = [
        "terminal_volume_ml",
        "terminal_error_pct",
        "time_to_within_2pct_min",
        "peak_volume_ml",
        "overshoot_pct",
        "total_infused_ml",
        "max_dose_rate",
        "mean_abs_tracking_error_ml",
    ];

    /// Values in [`Metrics::FIELDS`] order.
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.terminal_volume_ml),
            Some(self.terminal_error_pct),
            self.time_to_within_2pct_min,
            Some(self.peak_volume_ml),
            Some(self.overshoot_pct),
            Some(self.total_infused_ml),
            Some(self.max_dose_rate),
            Some(self.mean_abs_tracking_error_ml),
        ]
    }
}

/// Summary numbers of a trace. An empty trace yields all zeros.
pub fn compute_metrics(rows: &[TraceRow], cfg: &ScenarioConfig) -> Metrics {
    let Some(last) = rows.last() else {
        return Metrics::default();
    };
    let target = cfg.target_volume_ml;
    let dt = cfg.sample_period_min;
    let peak = rows
        .iter()
        .map(|r| r.true_volume_ml)
        .fold(f64::NEG_INFINITY, f64::max);
    let band = 0.02 * target;
    let settled_from = rows
        .iter()
        .rposition(|r| (r.true_volume_ml - target).abs() > band)
        .map_or(0, |i| i + 1);
    Metrics {
        terminal_volume_ml: last.true_volume_ml,
        terminal_error_pct: (last.true_volume_ml - target).abs() / target * 100.0,
        time_to_within_2pct_min: rows.get(settled_from).map(|r| r.t_min),
        peak_volume_ml: peak,
        overshoot_pct: ((peak - target) / target * 100.0).max(0.0),
        total_infused_ml: rows.iter().map(|r| r.dose_ml_per_min * dt).sum(),
        max_dose_rate: rows.iter().map(|r| r.dose_ml_per_min).fold(0.0, f64::max),
        mean_abs_tracking_error_ml: rows
            .iter()
            .map(|r| (r.true_volume_ml - target).abs())
            .sum::<f64>()
            / rows.len() as f64,
    }
}
