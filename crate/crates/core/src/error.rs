use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the harness.
#[derive(Debug, Error)]
pub enum MeadError {
    /// Shapes, references or hyperparameters that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called on an object in the wrong state (e.g. scoring an unfitted detector).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    /// Malformed binary input; `offset` is the byte position where parsing failed.
    #[error("format error in {path} at byte {offset}: {reason}")]
    Format { path: String, offset: u64, reason: String },

    /// A group that cannot be scored (e.g. no successful adversarial examples).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, MeadError>;

impl MeadError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        MeadError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MeadError::Io { path: path.into(), source }
    }
}
