//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Errors produced by validation, solvers, and the particle engine.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// A function required to take values in `[0, 1]` does not.
    NotUnitRange { min: f64, max: f64 },
    /// A construction or operation received inconsistent inputs
    /// (mismatched domains, bad probabilities, bad mesh, ...).
    Invalid(String),
    /// Offspring sampling requires a Markovian law (probabilities summing
    /// to one at every state); the given law is sub-Markovian.
    SubMarkovianSampling,
    /// A semigroup application could not reach its tolerance with an
    /// acceptable number of internal substeps.
    StepSize { needed: usize, max: usize },
    /// Picard iteration did not reach the requested tolerance.
    NoConvergence { iterations: usize, residual: f64 },
    /// The live particle population exceeded the configured cap.
    CapExceeded { cap: usize },
    /// Too many replicas were discarded by the population cap for the
    /// estimate to be trusted. Carries the flawed estimate for reporting.
    InvalidEstimate {
        mean: f64,
        stderr: f64,
        replicas: usize,
        capped: usize,
    },
    /// The Feynman–Kac route for the perturbed semigroup is only available
    /// under its stated hypotheses (constant killing, local Markovian law).
    FeynmanKacHypothesis(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::NotUnitRange { min, max } => {
                write!(f, "function leaves [0,1]: range [{min}, {max}]")
            }
            CoreError::Invalid(msg) => write!(f, "invalid input: {msg}"),
            CoreError::SubMarkovianSampling => {
                write!(f, "offspring sampling requires a Markovian law")
            }
            CoreError::StepSize { needed, max } => {
                write!(f, "substepping needs {needed} steps, cap is {max}")
            }
            CoreError::NoConvergence {
                iterations,
                residual,
            } => write!(
                f,
                "Picard iteration stalled after {iterations} iterations, residual {residual:e}"
            ),
            CoreError::CapExceeded { cap } => {
                write!(f, "live population exceeded cap {cap}")
            }
            CoreError::InvalidEstimate {
                capped, replicas, ..
            } => write!(
                f,
                "estimate invalid: {capped} of {replicas} replicas hit the population cap"
            ),
            CoreError::FeynmanKacHypothesis(msg) => {
                write!(f, "Feynman-Kac hypotheses not met: {msg}")
            }
        }
    }
}

pub type Result<T> = core::result::Result<T, CoreError>;
