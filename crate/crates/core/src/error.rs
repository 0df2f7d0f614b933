use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid UTF-8 at byte offset {offset}")]
    Decode { offset: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("vocabulary induction failed: {0}")]
    Induction(String),

    #[error("vocabulary capacity {target_size} cannot hold {required} specials and alphabet symbols")]
    Capacity { target_size: usize, required: usize },

    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("screening failed: {0}")]
    Screening(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("degenerate query vector (zero norm)")]
    DegenerateQuery,

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("alignment failed: {0}")]
    Alignment(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("transplant failed: {0}")]
    Transplant(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("output directory is locked by another run ({path}); remove the lock if no run is active")]
    Locked { path: PathBuf },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn stage(stage: &'static str, source: Error) -> Self {
        Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
