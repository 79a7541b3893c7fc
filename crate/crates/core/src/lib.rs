//! Optimal control of fluid dosing for hemorrhage resuscitation.
//!
//! The crate is `no_std` (it needs `alloc`). It contains:
//!
//! * [`rbf`]: global radial basis function kernels and design matrices,
//! * [`quadrature`]: Gauss-Legendre rules on `[-1, 1]`,
//! * [`ocp`]: the continuous optimal control problem and its time mapping,
//! * [`transcription`]: RBF-Galerkin transcription of an [`ocp::OcpProblem`] to an NLP,
//! * [`solver`]: an augmented-Lagrangian / BFGS solver for the transcribed NLP,
//! * [`patient`]: the lumped blood-volume response model and the measurement channel,
//! * [`controllers`]: the receding-horizon controller and the PID baseline.
//!
//! File formats, the closed-loop harness and the command line live in the
//! `resus-sim` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

extern crate alloc;

pub mod controllers;
mod linalg;
pub mod ocp;
pub mod patient;
pub mod quadrature;
pub mod rbf;
pub mod solver;
pub mod transcription;

pub use controllers::{
    build_horizon_ocp, pid_step, rhc_step, tune_pid_default, DoseLimitMode, PidConfig, PidState,
    RhcConfig, RhcState, RhcStep, StepStatus,
};
pub use ocp::{time_map, time_unmap, validate_problem, Bounds, OcpProblem, TimeWindow};
pub use patient::{NoiseModel, NoiseShape, PatientParams, PatientState, Schedule};
pub use quadrature::{lg_rule, QuadratureRule};
pub use rbf::{KernelKind, RbfBasis};
pub use solver::{solve, Nlp, SolveResult, SolveStatus, SolverOptions};
pub use transcription::{transcribe, Trajectory, TranscribedNlp, TranscriptionConfig};
