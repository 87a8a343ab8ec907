use std::path::PathBuf;

use thiserror::Error;

use crate::bench::EvalError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} outside domain [{lower}, {upper}]")]
    Domain { value: f64, lower: f64, upper: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported format version {found} (reader supports {supported})")]
    Version { found: u32, supported: u32 },

    #[error("search-space fingerprint mismatch: file has {found}, space is {expected}")]
    Fingerprint { expected: String, found: String },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
