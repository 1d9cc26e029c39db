use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("KL support violation at index {0}: p > 0 but q = 0")]
    Support(usize),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("config: {0}")]
    ConfigParse(String),
    #[error("{0}")]
    State(String),
    #[error("missing files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),
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

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Whether the error stems from the configuration rather than a run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::ConfigParse(_))
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
