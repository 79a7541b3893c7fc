//! Dosing controllers: the receding-horizon optimal controller and a PID
//! baseline. Both emit one infusion rate (mL/min) per sample period.

mod pid;
mod rhc;

pub use pid::{pid_step, tune_pid_default, PidConfig, PidState};
pub use rhc::{
    build_horizon_ocp, horizon_window, rhc_step, ControlReference, RhcConfig, RhcState, RhcStep,
    StepStatus,
};

use thiserror::Error;

use crate::patient::PatientError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("t = {t_now} is not before the final time {final_time}")]
    HorizonExhausted { t_now: f64, final_time: f64 },
    #[error("time step must be positive and finite")]
    InvalidStep,
    #[error(transparent)]
    Patient(#[from] PatientError),
}

/// How the per-kilogram dose limit is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DoseLimitMode {
    /// The limit is the largest volume given in one sample period.
    #[default]
    PerStep,
    /// Same rate bound, and the total infused volume is also capped by the limit.
    Cumulative,
}

/// Dose limit in mL for a patient of `weight_kg`.
pub fn dose_limit_ml(limit_ml_per_kg: f64, weight_kg: f64) -> f64 {
    limit_ml_per_kg * weight_kg
}

/// Upper bound on the infusion rate, mL/min.
pub fn max_rate(limit_ml_per_kg: f64, weight_kg: f64, sample_period_min: f64) -> f64 {
    dose_limit_ml(limit_ml_per_kg, weight_kg) / sample_period_min
}

/// Clamps `dose` into `[0, u_max]` and, in cumulative mode, so that the total
/// stays within `cap_ml`.
pub fn limit_dose(
    dose: f64,
    u_max: f64,
    mode: DoseLimitMode,
    cap_ml: f64,
    infused_ml: f64,
    dt: f64,
) -> f64 {
    let d = if dose.is_nan() {
        0.0
    } else {
        dose.clamp(0.0, u_max)
    };
    match mode {
        DoseLimitMode::PerStep => d,
        DoseLimitMode::Cumulative => d.min(((cap_ml - infused_ml) / dt).max(0.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dose_limits() {
        assert_eq!(max_rate(25.0, 70.0, 1.0), 1750.0);
        assert_eq!(max_rate(25.0, 70.0, 2.0), 875.0);
        assert_eq!(
            limit_dose(-3.0, 10.0, DoseLimitMode::PerStep, 0.0, 0.0, 1.0),
            0.0
        );
        assert_eq!(
            limit_dose(30.0, 10.0, DoseLimitMode::PerStep, 0.0, 0.0, 1.0),
            10.0
        );
        assert_eq!(
            limit_dose(f64::NAN, 10.0, DoseLimitMode::PerStep, 0.0, 0.0, 1.0),
            0.0
        );
        assert_eq!(
            limit_dose(8.0, 10.0, DoseLimitMode::Cumulative, 100.0, 95.0, 1.0),
            5.0
        );
        assert_eq!(
            limit_dose(8.0, 10.0, DoseLimitMode::Cumulative, 100.0, 120.0, 1.0),
            0.0
        );
    }
}
