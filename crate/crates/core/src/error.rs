use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("degenerate plane: distance {0:e} is below the rejection threshold")]
    DegeneratePlane(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unsupported camera model {0}")]
    UnsupportedCameraModel(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: image decode failed: {msg}")]
    Decode { path: PathBuf, msg: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{0}")]
    Failed(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
