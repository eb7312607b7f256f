use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty request: {0}")]
    EmptyRequest(&'static str),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unsupported oracle: {0}")]
    UnsupportedOracle(String),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("training diverged at step {step}: non-finite gradient")]
    Divergence { step: usize },

    #[error("could not parse model response: {message}")]
    Parse { message: String, raw: String },

    #[error("backend failure in stage `{stage}`: {message}")]
    Backend {
        stage: String,
        message: String,
        /// Entries persisted before the failure, when the stage writes incrementally.
        completed: usize,
    },

    #[error("shortfall for `{subject}`: wanted {wanted} unique items, got {got} after retries")]
    Shortfall { subject: String, wanted: usize, got: usize },

    #[error("missing prerequisite artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
