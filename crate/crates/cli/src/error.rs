use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing prerequisite: {} (run the earlier stage first)", .0.display())]
    Missing(PathBuf),

    #[error("{0}")]
    Backend(String),

    #[error("{0}")]
    Validation(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Backend(_) => 4,
            CliError::Validation(_) => 5,
        }
    }
}

impl From<domex_core::Error> for CliError {
    fn from(e: domex_core::Error) -> Self {
        use domex_core::Error as E;
        match e {
            E::MissingArtifact(p) => CliError::Missing(p),
            E::Backend { .. } | E::Shortfall { .. } | E::Parse { .. } => CliError::Backend(e.to_string()),
            E::Io(_) => CliError::Validation(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("i/o error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(format!("json error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(format!("csv error: {e}"))
    }
}
