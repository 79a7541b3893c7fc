//! Scenario files.
//!
//! A scenario is a TOML document. Every key is optional; missing keys take
//! the defaults of the moderate-hypovolemia experiment (3940 mL baseline,
//! 5000 mL target, one hour at one-minute sampling, no noise, RHC).
//!
//! ```toml
//! seed = 7
//! baseline_volume_ml = 3940
//! target_volume_ml = 5000
//! duration_min = 60
//! sample_period_min = 1
//! controller = "rhc"          # or "pid"
//!
//! [patient]
//! k_shift = 0.1
//! alpha = 2
//! weight_kg = 70
//!
//! [noise]
//! amplitude_ml = 250
//!
//! [[hemorrhage]]
//! start = 0
//! end = 15
//! value = 10
//!
//! [rhc]
//! control_weight = 5
//!
//! [pid]
//! kp = 0.5
//! ```

use std::fmt;
use std::path::Path;

use resus_core::controllers::max_rate;
use resus_core::patient::{PatientError, Segment};
use resus_core::{tune_pid_default, NoiseModel, PatientParams, PidConfig, RhcConfig, Schedule};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize scenario: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid(msg.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    #[default]
    Rhc,
    Pid,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Rhc => "rhc",
            ControllerKind::Pid => "pid",
        }
    }
}

/// PID section. Gains left out are filled by IMC tuning for the scenario's
/// patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidSettings {
    pub kp: Option<f64>,
    pub ki: Option<f64>,
    pub kd: Option<f64>,
    pub anti_windup: bool,
    pub derivative_filter_min: f64,
    pub dose_limit_ml_per_kg: f64,
}

impl Default for PidSettings {
    fn default() -> Self {
        Self {
            kp: None,
            ki: None,
            kd: None,
            anti_windup: true,
            derivative_filter_min: 0.0,
            dose_limit_ml_per_kg: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Falls back to `patient.v_b0` when absent.
    pub baseline_volume_ml: Option<f64>,
    pub target_volume_ml: f64,
    pub duration_min: f64,
    pub sample_period_min: f64,
    pub controller: ControllerKind,
    pub patient: PatientParams,
    pub noise: NoiseModel,
    pub hemorrhage: Vec<Segment>,
    pub rhc: RhcConfig,
    pub pid: PidSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            baseline_volume_ml: None,
            target_volume_ml: 5000.0,
            duration_min: 60.0,
            sample_period_min: 1.0,
            controller: ControllerKind::Rhc,
            patient: PatientParams::default(),
            noise: NoiseModel::default(),
            hemorrhage: Vec::new(),
            rhc: RhcConfig::default(),
            pid: PidSettings::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// Validates and fills every derived field: the baseline becomes the
    /// patient's `v_b0`, the RHC horizon, target and period follow the
    /// scenario, and missing PID gains are tuned.
    pub fn resolve(&self) -> Result<ScenarioConfig, ConfigError> {
        let mut c = self.clone();
        let baseline = c.baseline_volume_ml.unwrap_or(c.patient.v_b0);
        c.baseline_volume_ml = Some(baseline);
        c.patient.v_b0 = baseline;
        c.rhc.sample_period_min = c.sample_period_min;
        c.rhc.final_time_min = c.duration_min;
        c.rhc.target_volume_ml = c.target_volume_ml;
        c.validate()?;
        let tuned = tune_pid_default(&c.patient, 1.0, c.sample_period_min);
        c.pid.kp.get_or_insert(tuned.kp);
        c.pid.ki.get_or_insert(tuned.ki);
        c.pid.kd.get_or_insert(tuned.kd);
        Ok(c)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let baseline = self.baseline_volume_ml.unwrap_or(self.patient.v_b0);
        if !pos(baseline) {
            return Err(invalid("baseline_volume_ml must be positive"));
        }
        if !pos(self.target_volume_ml) {
            return Err(invalid("target_volume_ml must be positive"));
        }
        if !pos(self.sample_period_min) {
            return Err(invalid("sample_period_min must be positive"));
        }
        if !pos(self.duration_min) {
            return Err(invalid("duration_min must be positive"));
        }
        let steps = self.duration_min / self.sample_period_min;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(invalid(
                "duration_min must be a whole multiple of sample_period_min",
            ));
        }
        self.patient.validate().map_err(invalid)?;
        self.noise.validate().map_err(invalid)?;
        self.hemorrhage_schedule()?;
        self.rhc.validate().map_err(invalid)?;
        for (name, g) in [
            ("kp", self.pid.kp),
            ("ki", self.pid.ki),
            ("kd", self.pid.kd),
        ] {
            if g.is_some_and(|v| !v.is_finite()) {
                return Err(invalid(format_args!("pid.{name} must be finite")));
            }
        }
        if !pos(self.pid.dose_limit_ml_per_kg) {
            return Err(invalid("pid.dose_limit_ml_per_kg must be positive"));
        }
        if !(self.pid.derivative_filter_min.is_finite() && self.pid.derivative_filter_min >= 0.0) {
            return Err(invalid("pid.derivative_filter_min must be non-negative"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration_min / self.sample_period_min).round() as usize
    }

    pub fn baseline(&self) -> f64 {
        self.baseline_volume_ml.unwrap_or(self.patient.v_b0)
    }

    pub fn hemorrhage_schedule(&self) -> Result<Schedule, ConfigError> {
        Schedule::new(self.hemorrhage.clone()).map_err(|e: PatientError| invalid(e))
    }

    /// PID configuration; call on a resolved scenario.
    pub fn pid_config(&self) -> PidConfig {
        let u_max = max_rate(
            self.pid.dose_limit_ml_per_kg,
            self.patient.weight_kg,
            self.sample_period_min,
        );
        PidConfig {
            kp: self.pid.kp.unwrap_or(0.0),
            ki: self.pid.ki.unwrap_or(0.0),
            kd: self.pid.kd.unwrap_or(0.0),
            u_max,
            anti_windup: self.pid.anti_windup,
            derivative_filter_min: self.pid.derivative_filter_min,
        }
    }
}
