use std::path::PathBuf;

use thiserror::Error;

use crate::numkernel::KernelError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path} at byte offset {offset}: {msg}")]
    Decode {
        path: PathBuf,
        offset: usize,
        msg: String,
    },
    #[error("manifest validation failed: {0}")]
    Manifest(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),
    #[error("lifecycle error: {0}")]
    Lifecycle(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
