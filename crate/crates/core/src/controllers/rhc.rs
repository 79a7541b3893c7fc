use alloc::boxed::Box;
use alloc::vec;

use super::{limit_dose, max_rate, ControllerError, DoseLimitMode};
use crate::ocp::{Bounds, Derivatives, EndpointPartials, OcpProblem, Partials, TimeWindow};
use crate::patient::PatientParams;
use crate::solver::{solve, SolveStatus, SolverOptions};
use crate::transcription::{transcribe, Enforcement, Trajectory, TranscriptionConfig};

/// Reference the control is pulled towards by the regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ControlReference {
    /// Penalize `(u / u_max)^2`.
    Zero,
    /// Penalize the distance from the rate that holds the target volume.
    #[default]
    Holding,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RhcConfig {
    pub sample_period_min: f64,
    pub final_time_min: f64,
    pub target_volume_ml: f64,
    pub transcription: TranscriptionConfig,
    /// Weight `w_u` on the normalized control deviation.
    pub control_weight: f64,
    pub control_reference: ControlReference,
    pub dose_limit_ml_per_kg: f64,
    pub dose_limit_mode: DoseLimitMode,
    pub min_horizon_min: f64,
    pub solver: SolverOptions,
    pub warm_start: bool,
    pub analytic_derivatives: bool,
}

impl Default for RhcConfig {
    fn default() -> Self {
        Self {
            sample_period_min: 1.0,
            final_time_min: 60.0,
            target_volume_ml: 5000.0,
            transcription: TranscriptionConfig {
                n_basis: 12,
                enforcement: Enforcement::QuadratureNodesAndEndpoints,
                control_offsets: true,
                ..Default::default()
            },
            control_weight: 5.0,
            control_reference: ControlReference::Holding,
            dose_limit_ml_per_kg: 25.0,
            dose_limit_mode: DoseLimitMode::PerStep,
            min_horizon_min: 2.0,
            solver: SolverOptions::default(),
            warm_start: true,
            analytic_derivatives: true,
        }
    }
}

impl RhcConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.sample_period_min) || !pos(self.final_time_min) {
            return Err(ControllerError::InvalidConfig(
                "sample period and final time must be positive",
            ));
        }
        let steps = self.final_time_min / self.sample_period_min;
        if (steps - libm::round(steps)).abs() > 1e-9 {
            return Err(ControllerError::InvalidConfig(
                "sample period must divide the final time",
            ));
        }
        if !pos(self.dose_limit_ml_per_kg) {
            return Err(ControllerError::InvalidConfig(
                "dose limit must be positive",
            ));
        }
        if !pos(self.target_volume_ml) {
            return Err(ControllerError::InvalidConfig(
                "target volume must be positive",
            ));
        }
        if !(self.control_weight.is_finite() && self.control_weight >= 0.0) {
            return Err(ControllerError::InvalidConfig(
                "control weight must be non-negative",
            ));
        }
        if !pos(self.min_horizon_min) {
            return Err(ControllerError::InvalidConfig(
                "minimum horizon must be positive",
            ));
        }
        if self.transcription.validate().is_err() {
            return Err(ControllerError::InvalidConfig(
                "invalid transcription settings",
            ));
        }
        if self.solver.validate().is_err() {
            return Err(ControllerError::InvalidConfig("invalid solver settings"));
        }
        Ok(())
    }

    /// Largest infusion rate, mL/min.
    pub fn u_max(&self, params: &PatientParams) -> f64 {
        max_rate(
            self.dose_limit_ml_per_kg,
            params.weight_kg,
            self.sample_period_min,
        )
    }

    /// Total volume cap used in cumulative mode, mL.
    pub fn volume_cap_ml(&self, params: &PatientParams) -> f64 {
        self.dose_limit_ml_per_kg * params.weight_kg
    }
}

/// `[t_now, final_time]`, stretched to `min_horizon_min` near the end.
pub fn horizon_window(cfg: &RhcConfig, t_now: f64) -> Result<TimeWindow, ControllerError> {
    if !(t_now < cfg.final_time_min) {
        return Err(ControllerError::HorizonExhausted {
            t_now,
            final_time: cfg.final_time_min,
        });
    }
    let tf = cfg.final_time_min.max(t_now + cfg.min_horizon_min);
    TimeWindow::new(t_now, tf).map_err(|_| ControllerError::InvalidConfig("degenerate horizon"))
}

/// One-state, one-control tracking problem on the current horizon.
///
/// The control is the normalized rate `w = u / u_max` in `[0, 1]`:
///
/// ```text
/// dy/dt = c (u_max w - v) - K y
/// L     = (y - y_target)^2 + w_u (w - w_ref)^2
/// y(t_now) = y_measured
/// ```
///
/// `v` is the current hemorrhage rate, held over the horizon.
pub fn build_horizon_ocp(
    cfg: &RhcConfig,
    params: &PatientParams,
    t_now: f64,
    y_measured: f64,
    hemorrhage_ml_per_min: f64,
) -> Result<OcpProblem, ControllerError> {
    let window = horizon_window(cfg, t_now)?;
    let u_max = cfg.u_max(params);
    let c = params.input_gain();
    let k = params.k_shift;
    let v = hemorrhage_ml_per_min;
    let y_target = params.normalize(cfg.target_volume_ml);
    let w_ref = match cfg.control_reference {
        ControlReference::Zero => 0.0,
        ControlReference::Holding => {
            ((params.holding_net_rate(y_target) + v) / u_max).clamp(0.0, 1.0)
        }
    };
    let wu = cfg.control_weight;
    let b = c * u_max;

    let p = OcpProblem::new(1, 1, window, move |x, u| vec![b * u[0] - c * v - k * x[0]])
        .with_lagrange(move |x, u| {
            let e = x[0] - y_target;
            let d = u[0] - w_ref;
            e * e + wu * d * d
        })
        .with_boundary(1, move |x0, _, _| vec![x0[0] - y_measured])
        .with_control_bounds(vec![Bounds::new(0.0, 1.0)]);
    if !cfg.analytic_derivatives {
        return Ok(p);
    }
    Ok(p.with_derivatives(Derivatives {
        dynamics: Some(Box::new(move |_, _| Partials {
            wrt_x: vec![-k],
            wrt_u: vec![b],
        })),
        lagrange: Some(Box::new(move |x, u| Partials {
            wrt_x: vec![2.0 * (x[0] - y_target)],
            wrt_u: vec![2.0 * wu * (u[0] - w_ref)],
        })),
        boundary: Some(Box::new(|_, _, _| EndpointPartials {
            wrt_initial: vec![1.0],
            wrt_final: vec![0.0],
        })),
        ..Default::default()
    }))
}

/// Outcome of one controller step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Converged,
    /// The previous dose was repeated because the solve did not converge.
    Held(SolveStatus),
    /// The previous dose was repeated because no problem could be built.
    HeldOnError,
}

impl StepStatus {
    pub fn label(self) -> &'static str {
        match self {
            StepStatus::Converged => "converged",
            StepStatus::Held(SolveStatus::Converged) => "held",
            StepStatus::Held(SolveStatus::MaxIterations) => "held:max_iterations",
            StepStatus::Held(SolveStatus::Infeasible) => "held:infeasible",
            StepStatus::Held(SolveStatus::NumericalFailure) => "held:numerical_failure",
            StepStatus::HeldOnError => "held:error",
        }
    }

    pub fn is_held(self) -> bool {
        !matches!(self, StepStatus::Converged)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RhcState {
    /// Last solved trajectory, used as the next starting point.
    pub previous: Option<Trajectory>,
    pub last_dose: f64,
    /// Volume given so far, mL. Never decreases.
    pub infused_ml: f64,
    pub solves: usize,
    pub held: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhcStep {
    /// Rate to apply over the next sample period, mL/min.
    pub dose: f64,
    pub status: StepStatus,
    pub window: Option<TimeWindow>,
    /// First sample of the solved open-loop rate, before limiting.
    pub planned_dose: Option<f64>,
    pub objective: Option<f64>,
    pub iterations: usize,
}

/// Solves the horizon problem from the measured volume and returns the
/// first dose of the plan. Never fails: when no converged plan is available
/// the previous dose is repeated and the step is flagged.
pub fn rhc_step(
    cfg: &RhcConfig,
    params: &PatientParams,
    state: &RhcState,
    t_now: f64,
    measured_volume_ml: f64,
    hemorrhage_ml_per_min: f64,
) -> (RhcStep, RhcState) {
    let u_max = cfg.u_max(params);
    let dt = cfg.sample_period_min;
    let mut next = state.clone();
    let mut step = RhcStep {
        dose: state.last_dose,
        status: StepStatus::HeldOnError,
        window: None,
        planned_dose: None,
        objective: None,
        iterations: 0,
    };

    let y = params.normalize(measured_volume_ml);
    let planned = build_horizon_ocp(cfg, params, t_now, y, hemorrhage_ml_per_min)
        .ok()
        .and_then(|problem| {
            let nlp = transcribe(&problem, cfg.transcription.clone()).ok()?;
            let warm = if cfg.warm_start {
                state.previous.as_ref().and_then(|t| nlp.encode(t).ok())
            } else {
                None
            };
            let z0 = warm.unwrap_or_else(|| {
                let y_target = params.normalize(cfg.target_volume_ml);
                let w = ((params.holding_net_rate(y_target) + hemorrhage_ml_per_min) / u_max)
                    .clamp(0.0, 1.0);
                nlp.initial_guess(&[y], &[y_target], &[w])
            });
            let result = solve(&nlp, &z0, &cfg.solver).ok()?;
            let traj = nlp.extract_trajectory(&result.z_star).ok()?;
            Some((problem.window(), result, traj))
        });

    if let Some((window, result, traj)) = planned {
        next.solves += 1;
        step.window = Some(window);
        step.objective = Some(result.objective_value);
        step.iterations = result.iterations;
        if result.status == SolveStatus::Converged {
            if let Ok(u) = traj.control(-1.0) {
                let planned = u_max * u[0];
                step.planned_dose = Some(planned);
                step.dose = planned;
                step.status = StepStatus::Converged;
                next.previous = Some(traj);
            }
        } else {
            step.status = StepStatus::Held(result.status);
        }
    }
    if step.status.is_held() {
        next.held += 1;
    }

    step.dose = limit_dose(
        step.dose,
        u_max,
        cfg.dose_limit_mode,
        cfg.volume_cap_ml(params),
        state.infused_ml,
        dt,
    );
    next.last_dose = step.dose;
    next.infused_ml += step.dose * dt;
    (step, next)
}
