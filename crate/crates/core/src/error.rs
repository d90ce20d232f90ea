//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CbfedError>;

/// Failure modes of field operations, solvers and experiments.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CbfedError {
    /// Inconsistent shapes, grids or configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Model parameters violate an admissibility condition.
    #[error("admissibility error: {0}")]
    Admissibility(String),

    /// A documented precondition of an operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The time integrator produced a non-finite or runaway state.
    #[error("blow-up at step {step} (t = {time}): {reason}")]
    BlowUp {
        /// Index of the step that failed.
        step: usize,
        /// Simulation time at the start of the failing step.
        time: f64,
        /// Short description of what was detected.
        reason: String,
    },

    /// A requested approximation tolerance cannot be met on the grid.
    #[error("tolerance {requested:e} unreachable; best achievable is {best:e}")]
    ToleranceUnreachable {
        /// Tolerance that was asked for.
        requested: f64,
        /// Smallest tolerance attainable with the available modes.
        best: f64,
    },

    /// Every path of a Monte Carlo experiment aborted.
    #[error("experiment failed: {0}")]
    Experiment(String),

    /// Reading or writing a snapshot failed.
    #[error("i/o error: {0}")]
    Io(String),
}

impl CbfedError {
    /// True for errors raised by the numerical integrators.
    pub fn is_numerical(&self) -> bool {
        matches!(self, CbfedError::BlowUp { .. } | CbfedError::Experiment(_))
    }
}

impl From<std::io::Error> for CbfedError {
    fn from(e: std::io::Error) -> Self {
        CbfedError::Io(e.to_string())
    }
}
