use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resus_core::patient::{measure, step_exact, PatientError};
use resus_core::{pid_step, rhc_step, PatientParams, PatientState, PidState, RhcState, Schedule};
use thiserror::Error;

use crate::config::{ConfigError, ControllerKind, ScenarioConfig};
use crate::metrics::{compute_metrics, Metrics};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("plant integration failed: {0}")]
    Plant(#[from] PatientError),
    #[error("controller failed: {0}")]
    Controller(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t_min: f64,
    pub true_volume_ml: f64,
    pub measured_volume_ml: f64,
    /// Rate applied over `[t, t + period)`; zero on the final row.
    pub dose_ml_per_min: f64,
    /// Volume infused by `t + period`.
    pub cumulative_infused_ml: f64,
    pub solver_status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    /// The resolved scenario the trace was produced from.
    pub config: ScenarioConfig,
    pub controller: ControllerKind,
    pub rows: Vec<TraceRow>,
}

/// Hemorrhage rate at `t`, zero between segments.
fn hemorrhage_at(schedule: &Schedule, t: f64) -> f64 {
    schedule.value_at(t).unwrap_or(0.0)
}

/// Advances the plant over one period with a constant dose, splitting at
/// hemorrhage breakpoints.
fn advance(
    p: &PatientParams,
    state: &PatientState,
    dose: f64,
    hemorrhage: &Schedule,
    dt: f64,
) -> Result<PatientState, PatientError> {
    let (a, b) = (state.t, state.t + dt);
    let mut cuts = vec![a];
    for s in hemorrhage.segments() {
        for edge in [s.start, s.end] {
            if edge > a && edge < b {
                cuts.push(edge);
            }
        }
    }
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut s = *state;
    for w in cuts.windows(2) {
        let v = hemorrhage_at(hemorrhage, w[0]);
        s = step_exact(p, &s, dose, v, w[1] - w[0])?;
        s.t = w[1];
    }
    s.t = b;
    Ok(s)
}

enum Controller {
    Rhc(Box<RhcState>),
    Pid(PidState),
}

/// Runs one episode with the scenario's own controller.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(SimulationTrace, Metrics), HarnessError> {
    run_with_controller(cfg, cfg.controller)
}

/// Runs one episode with `kind` regardless of the scenario's choice.
pub fn run_with_controller(
    cfg: &ScenarioConfig,
    kind: ControllerKind,
) -> Result<(SimulationTrace, Metrics), HarnessError> {
    let cfg = cfg.resolve()?;
    let p = cfg.patient;
    let dt = cfg.sample_period_min;
    let hemorrhage = cfg.hemorrhage_schedule()?;
    let pid_cfg = cfg.pid_config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut controller = match kind {
        ControllerKind::Rhc => Controller::Rhc(Box::default()),
        ControllerKind::Pid => Controller::Pid(PidState::default()),
    };
    let mut state = PatientState::default();
    let mut infused = 0.0;
    let steps = cfg.steps();
    let mut rows = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        state.t = t;
        let measured = measure(&state, &p, &cfg.noise, &mut rng);
        let (dose, status) = if k == steps {
            (0.0, "end".to_string())
        } else {
            let v = hemorrhage_at(&hemorrhage, t);
            match &mut controller {
                Controller::Rhc(s) => {
                    let (step, next) = rhc_step(&cfg.rhc, &p, s, t, measured, v);
                    **s = next;
                    (step.dose, step.status.label().to_string())
                }
                Controller::Pid(s) => {
                    let error = cfg.target_volume_ml - measured;
                    let (u, next) = pid_step(&pid_cfg, s, error, dt)
                        .map_err(|e| HarnessError::Controller(e.to_string()))?;
                    *s = next;
                    (u, "pid".to_string())
                }
            }
        };
        infused += dose * dt;
        rows.push(TraceRow {
            t_min: t,
            true_volume_ml: state.volume_ml(&p),
            measured_volume_ml: measured,
            dose_ml_per_min: dose,
            cumulative_infused_ml: infused,
            solver_status: status,
        });
        if k < steps {
            state = advance(&p, &state, dose, &hemorrhage, dt)?;
        }
    }
    let trace = SimulationTrace {
        config: cfg,
        controller: kind,
        rows,
    };
    let metrics = compute_metrics(&trace.rows, &trace.config);
    Ok((trace, metrics))
}
