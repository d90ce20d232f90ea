//! Runner errors and their exit codes.

use cbfed::CbfedError;
use thiserror::Error;

/// Exit code when every criterion passes.
pub const EXIT_PASS: i32 = 0;
/// Exit code when at least one criterion fails.
pub const EXIT_CRITERION: i32 = 1;
/// Exit code for configuration and admissibility errors.
pub const EXIT_SCHEMA: i32 = 2;
/// Exit code for numerical aborts.
pub const EXIT_NUMERICAL: i32 = 3;

/// Failure of a run.
#[derive(Debug, Error)]
pub enum LabError {
    /// Malformed or inadmissible configuration, detected before execution.
    #[error("invalid configuration: {0}")]
    Schema(String),

    /// Error raised by the toolkit during execution.
    #[error(transparent)]
    Model(#[from] CbfedError),

    /// Writing outputs failed.
    #[error("output error: {0}")]
    Output(String),
}

impl LabError {
    /// Wraps a toolkit error raised while validating the configuration.
    pub fn schema(e: CbfedError) -> Self {
        LabError::Schema(e.to_string())
    }

    /// Process exit code.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Schema(_) => EXIT_SCHEMA,
            LabError::Model(e) if e.is_numerical() => EXIT_NUMERICAL,
            LabError::Model(CbfedError::Config(_) | CbfedError::Admissibility(_)) => EXIT_SCHEMA,
            LabError::Model(_) | LabError::Output(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Output(e.to_string())
    }
}
