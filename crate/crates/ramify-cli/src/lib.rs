//! Experiment runner and verification harness around `ramify-core`:
//! config parsing, solver/simulation dispatch, identity cross-checks, and
//! deterministic CSV/JSON export.

use std::fmt;

pub mod config;
pub mod export;
pub mod run;
pub mod verify;

pub use config::ExperimentSpec;
pub use run::{run_experiment, Bundle, CommandKind, RunOptions};
pub use verify::{verify_suite, CheckOutcome, CheckSelection};

/// Application-level error with the process exit code it maps to.
#[derive(Debug, Clone)]
pub enum AppError {
    /// Bad configuration or inputs (exit 2).
    Validation(String),
    /// Solver could not converge or substep (exit 3).
    Solver(String),
    /// Estimates invalidated by population-cap breaches (exit 4).
    Estimate(String),
    /// One or more verification checks failed (exit 5).
    VerifyFailed(usize),
    /// Filesystem trouble (exit 6).
    Io(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Validation(_) => 2,
            AppError::Solver(_) => 3,
            AppError::Estimate(_) => 4,
            AppError::VerifyFailed(_) => 5,
            AppError::Io(_) => 6,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Validation(m) => write!(f, "validation error: {m}"),
            AppError::Solver(m) => write!(f, "solver error: {m}"),
            AppError::Estimate(m) => write!(f, "estimate error: {m}"),
            AppError::VerifyFailed(n) => write!(f, "{n} verification check(s) failed"),
            AppError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for AppError {}

impl From<ramify_core::CoreError> for AppError {
    fn from(e: ramify_core::CoreError) -> Self {
        use ramify_core::CoreError::*;
        match e {
            Invalid(_) | NotUnitRange { .. } | SubMarkovianSampling | FeynmanKacHypothesis(_) => {
                AppError::Validation(e.to_string())
            }
            StepSize { .. } | NoConvergence { .. } => AppError::Solver(e.to_string()),
            CapExceeded { .. } | InvalidEstimate { .. } => AppError::Estimate(e.to_string()),
        }
    }
}
