use std::path::Path;

use thiserror::Error;

/// Command failure, classified by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stale or missing artifact: {0}")]
    Stale(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Stale(_) => 3,
            Self::Runtime(_) => 4,
        }
    }

    pub(crate) fn stale(path: &Path, why: impl std::fmt::Display) -> Self {
        Self::Stale(format!("{}: {why}", path.display()))
    }
}

impl From<mfc_core::Error> for CliError {
    fn from(e: mfc_core::Error) -> Self {
        match e {
            mfc_core::Error::Config(_) => Self::Config(e.to_string()),
            mfc_core::Error::Manifest(_) => Self::Stale(e.to_string()),
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}
