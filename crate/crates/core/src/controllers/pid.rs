use super::ControllerError;
use crate::patient::PatientParams;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PidConfig {
    /// Proportional gain, (mL/min) per mL of volume error.
    pub kp: f64,
    /// Integral gain, (mL/min) per mL*min.
    pub ki: f64,
    /// Derivative gain, (mL/min) per mL/min.
    pub kd: f64,
    pub u_max: f64,
    /// Conditional integration: skip accumulating while the output is
    /// saturated in the direction the error pushes.
    pub anti_windup: bool,
    /// First-order filter on the derivative term, minutes. Zero disables it.
    pub derivative_filter_min: f64,
}

impl PidConfig {
    pub fn new(kp: f64, ki: f64, kd: f64, u_max: f64) -> Self {
        Self {
            kp,
            ki,
            kd,
            u_max,
            anti_windup: true,
            derivative_filter_min: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.kp.is_finite() && self.ki.is_finite() && self.kd.is_finite()) {
            return Err(ControllerError::InvalidConfig("PID gains must be finite"));
        }
        if !(self.u_max.is_finite() && self.u_max > 0.0) {
            return Err(ControllerError::InvalidConfig("u_max must be positive"));
        }
        if !(self.derivative_filter_min.is_finite() && self.derivative_filter_min >= 0.0) {
            return Err(ControllerError::InvalidConfig(
                "derivative filter time constant must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
    pub derivative: f64,
}

/// One PID update. `error` is target minus measured volume, mL.
///
/// The integral is advanced before the output is formed, so with
/// `kp = 2, ki = 0.5` and errors `[1, 1]` at `dt = 1` the outputs are
/// `2.5` and `3`. The first call has no derivative term.
pub fn pid_step(
    cfg: &PidConfig,
    state: &PidState,
    error: f64,
    dt: f64,
) -> Result<(f64, PidState), ControllerError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(ControllerError::InvalidStep);
    }
    let raw_d = state.prev_error.map_or(0.0, |p| (error - p) / dt);
    let tf = cfg.derivative_filter_min;
    let derivative = if tf > 0.0 && state.prev_error.is_some() {
        (tf * state.derivative + dt * raw_d) / (tf + dt)
    } else {
        raw_d
    };

    let output = |integral: f64| cfg.kp * error + cfg.ki * integral + cfg.kd * derivative;
    let mut integral = state.integral + error * dt;
    let mut raw = output(integral);
    if cfg.anti_windup && ((raw > cfg.u_max && error > 0.0) || (raw < 0.0 && error < 0.0)) {
        integral = state.integral;
        raw = output(integral);
    }
    let dose = if raw.is_nan() {
        0.0
    } else {
        raw.clamp(0.0, cfg.u_max)
    };
    Ok((
        dose,
        PidState {
            integral,
            prev_error: Some(error),
            derivative,
        },
    ))
}

/// IMC tuning for the first-order plant.
///
/// A constant rate `u` moves the volume by `G u` at steady state, with
/// `G = V_B0 c / K` and time constant `tau = 1/K`. With the closed-loop time
/// constant `lambda = 3 * sample_period_min`:
///
/// ```text
/// kp = tau / (G lambda),   ki = kp / tau,   kd = 0
/// ```
pub fn tune_pid_default(params: &PatientParams, u_max: f64, sample_period_min: f64) -> PidConfig {
    let gain = params.v_b0 * params.input_gain() / params.k_shift;
    let tau = 1.0 / params.k_shift;
    let lambda = 3.0 * sample_period_min;
    let kp = tau / (gain * lambda);
    PidConfig::new(kp, kp / tau, 0.0, u_max)
}
