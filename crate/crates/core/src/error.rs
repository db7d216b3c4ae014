use thiserror::Error;

/// Errors produced by the core library.
///
/// Linguistic failures during augmentation (missing synonyms, untranslatable
/// words) are never errors; they surface as plan misses. This type covers
/// infrastructure and contract violations only.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite gradient encountered")]
    NonFiniteGradient,

    #[error("translation backend {backend} failed: {message}")]
    Backend { backend: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        CoreError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
