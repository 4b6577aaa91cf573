//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("model is not trained: {0}")]
    Untrained(String),

    #[error("router {0} is not calibrated")]
    Uncalibrated(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("missing artifact `{path}`; run the `{stage}` stage first")]
    MissingArtifact { path: String, stage: String },

    #[error("artifact `{path}` is stale: {detail}; re-run the `{stage}` stage")]
    StaleArtifact {
        path: String,
        stage: String,
        detail: String,
    },

    #[error("malformed artifact `{path}`: {detail}")]
    MalformedArtifact { path: String, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn dim(expected: usize, got: usize, context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected,
            got,
            context: context.into(),
        }
    }
}
