//! Closed-loop resuscitation experiments on top of `resus-core`: scenario
//! files, the episode runner, metrics, Monte Carlo batches, CSV output and
//! the analytic oracle suite behind the `resus` binary.

pub mod config;
pub mod harness;
pub mod metrics;
pub mod montecarlo;
pub mod oracle;
pub mod output;

pub use config::{ConfigError, ControllerKind, PidSettings, ScenarioConfig};
pub use harness::{run_scenario, run_with_controller, HarnessError, SimulationTrace, TraceRow};
pub use metrics::{compute_metrics, Metrics};
pub use montecarlo::{monte_carlo, FieldStats, MonteCarloSummary, RunOutcome};
pub use oracle::{run_oracles, OracleCheck};
