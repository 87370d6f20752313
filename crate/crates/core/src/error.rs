use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
    #[error("auxiliary vectors missing for items: {}", .0.join(", "))]
    MissingAux(Vec<String>),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("split error for user {user}: {message}")]
    Split { user: usize, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite activation in encoder layer {layer}")]
    NonFinite { layer: usize },
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("ablation variant `{variant}` failed: {source}")]
    Variant {
        variant: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
