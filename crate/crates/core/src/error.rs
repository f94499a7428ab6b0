use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numeric core, the trainer and the checkpoint layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor maps are not aligned: {0}")]
    Alignment(String),

    #[error("zero-norm vector in cosine similarity (norm {norm:e})")]
    ZeroNorm { norm: f64 },

    #[error("gradient accumulator read before any gradient was accumulated")]
    Uninitialized,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("activation cache does not match the current model state")]
    StaleCache,

    #[error("gradient supplied for frozen tensor `{0}`")]
    FrozenGradient(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint {path} is corrupt: stored crc {stored:#010x}, computed {computed:#010x}")]
    CorruptCheckpoint {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },

    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than misuse of the API.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::CorruptCheckpoint { .. }
                | Error::Format(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Alignment(_)
                | Error::ZeroNorm { .. }
                | Error::InvalidTensor(_)
                | Error::Dimension(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
