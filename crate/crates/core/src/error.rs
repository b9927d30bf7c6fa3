use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("domain error: {0}")]
    Domain(String),

    /// The two training symbols are identical, so the noise estimate is zero.
    #[error("degenerate LTS pair: |Y1 - Y2|^2 is zero (infinite SNR)")]
    DegenerateInput,

    #[error("SNR estimation failed: log argument {0} is not positive")]
    EstimationFailure(f64),

    #[error("episode lifecycle error: {0}")]
    Lifecycle(String),

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("parse error in {origin}: {message}")]
    Parse { origin: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = LinkError> = std::result::Result<T, E>;

impl LinkError {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        LinkError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LinkError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        LinkError::Csv {
            path: path.into(),
            source,
        }
    }
}
