use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("connectivity: {0}")]
    Connectivity(String),

    #[error("spectral condition violated: {0}")]
    Spectral(String),

    #[error("degenerate structure: {0}")]
    Structure(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("degenerate problem: {0}")]
    Degeneracy(String),

    #[error("precondition failed: {0}")]
    Condition(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("{variant} diverged at iteration {k}")]
    Divergence { variant: String, k: usize },

    #[error("config error in {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
