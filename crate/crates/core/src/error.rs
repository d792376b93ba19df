use std::path::PathBuf;

/// Errors raised by the learners, the oracle and the experiment driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid utility range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("horizon of {horizon} rounds exhausted")]
    Exhausted { horizon: usize },

    #[error("utility {value} outside declared range [{lo}, {hi}]")]
    RangeViolation { value: f64, lo: f64, hi: f64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("environment error: {0}")]
    Environment(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("validation error in {context}: {message}")]
    Validation { context: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True for errors that stem from bad user input (configs, instance files).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. }
                | Error::Json { .. }
                | Error::InvalidDomain(_)
                | Error::InvalidRange { .. }
                | Error::InvalidParameter(_)
                | Error::Unsupported(_)
                | Error::Precondition(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
