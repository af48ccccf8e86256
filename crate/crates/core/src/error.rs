use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("rate condition violated: r = {r} >= 1 for lambda = {lambda}")]
    RateInvalid { lambda: f64, r: f64 },

    #[error("diverged at round {round} (value {value})")]
    Diverged { round: usize, value: f64 },

    #[error("solver did not reach tolerance {tol} within {iterations} iterations")]
    NotConverged { tol: f64, iterations: usize },

    #[error("enumeration too large: {0}")]
    EnumerationTooLarge(String),

    #[error("partition failed: {0}")]
    Partition(String),

    #[error("trace schema error: {0}")]
    Schema(String),

    #[error("trace format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Whether the error comes from input validation rather than a numerical failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Diverged { .. } | Error::NotConverged { .. } | Error::Io(_))
    }
}
