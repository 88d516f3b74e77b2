//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid basis input: {0}")]
    Basis(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
