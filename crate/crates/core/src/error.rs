use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("covariance is not positive semi-definite ({context})")]
    NonPsdCovariance { context: String },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid count {count}: {reason}")]
    InvalidCount { count: usize, reason: &'static str },

    #[error("value {value} outside of domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn non_psd(context: impl Into<String>) -> Self {
        Error::NonPsdCovariance {
            context: context.into(),
        }
    }

    pub(crate) fn dim(expected: usize, actual: usize, context: &'static str) -> Self {
        Error::DimensionMismatch {
            expected,
            actual,
            context,
        }
    }

    /// True for failures that come from reading or decoding files rather than from the numerics.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Parse { .. } | Error::Json { .. }
        )
    }
}
