use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("scan `{scan_id}`: invalid `{field}`: {message}")]
    Validation {
        scan_id: String,
        field: String,
        message: String,
    },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("dataset too small: need at least {needed} scans, got {got}")]
    DatasetTooSmall { needed: usize, got: usize },

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("generator configuration infeasible: {0}")]
    InfeasibleConfig(String),

    #[error("experiment plan: {0}")]
    Plan(String),

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}
