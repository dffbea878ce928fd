use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mdlsel_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid plan: {0}")]
    Plan(String),

    #[error("{dir} holds results of plan {found}, not {expected}")]
    HashMismatch {
        dir: PathBuf,
        expected: String,
        found: String,
    },

    #[error("missing input: {0}")]
    Missing(String),

    #[error("{failed} of {total} cells failed; first error: {first}")]
    Cells {
        failed: usize,
        total: usize,
        first: Box<CliError>,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
