use std::io;

use redim_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage}: {msg}")]
    Plan { stage: usize, msg: String },
    #[error("audio: {0}")]
    Audio(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("eval: {0}")]
    Eval(String),
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures caused by NaN/Inf values rather than bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::Tensor(TensorError::NonFinite { .. })
        )
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Plan { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
