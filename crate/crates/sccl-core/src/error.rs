use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ScclError>;

#[derive(Debug, Error)]
pub enum ScclError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown word: {0:?}")]
    UnknownWord(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },
}

impl ScclError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ScclError::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        ScclError::Parse { path: path.into(), line, msg: msg.into() }
    }

    pub fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        ScclError::Shape { op, msg: msg.into() }
    }
}
