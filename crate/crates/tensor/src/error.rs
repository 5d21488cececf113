use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Contract {
        op,
        msg: msg.into(),
    }
}
