use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error at {coordinate}: {message}")]
    Domain { coordinate: String, message: String },

    #[error("invalid schema: {}", .0.join("; "))]
    Schema(Vec<String>),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("covariance block is singular (condition number {condition:.3e})")]
    Singular { condition: f64 },

    #[error("box probability did not reach accuracy {target:.3e}: std error {achieved:.3e} after {points} points")]
    Accuracy {
        target: f64,
        achieved: f64,
        points: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(coordinate: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Domain {
            coordinate: coordinate.into(),
            message: message.into(),
        }
    }
}
