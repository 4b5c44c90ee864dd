use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {message} at line {line}", path.display())]
    Load {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("packing: {0}")]
    Packing(String),

    #[error("generation: {0}")]
    Generation(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("model: {0}")]
    Model(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training: {0}")]
    Training(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
