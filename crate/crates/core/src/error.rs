use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported or malformed image format: {0}")]
    Format(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("insufficient data: {found} samples survived filtering, need at least {needed}")]
    InsufficientData { found: usize, needed: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
