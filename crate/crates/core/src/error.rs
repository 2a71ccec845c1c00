use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can surface. The CLI maps these onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid audio: {0}")]
    InvalidAudio(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("degenerate batch: every target position is ignored")]
    DegenerateBatch,

    #[error("sequence of {len} tokens exceeds the decoder limit of {max}")]
    Length { len: usize, max: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("mixture error: {0}")]
    Mixture(String),

    #[error("manifest {path}, line {line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
