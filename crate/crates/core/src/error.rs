use thiserror::Error;

/// Errors raised by case handling and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Syntax problem in a case file. `line` is 1-based, 0 when unknown.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The case parsed but breaks a model invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("island without slack: bus {bus} carries load or generation but is not connected to the slack bus")]
    Island { bus: u32 },

    #[error("singular {what} matrix (pivot collapse at column {column})")]
    Singular { what: &'static str, column: usize },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    MaxIterations { iterations: usize, residual: f64 },

    /// A hard limiter was evaluated at or beyond one of its bounds.
    #[error("limiter fault: value {value} outside open interval ({lo}, {hi})")]
    LimiterFault { value: f64, lo: f64, hi: f64 },

    #[error("continuation stall at gamma={gamma}")]
    ContinuationStall { gamma: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
