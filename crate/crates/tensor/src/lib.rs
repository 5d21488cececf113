//! Dense tensors with a reverse-mode tape.
//!
//! Values live in [`Tensor`]; differentiable computation is recorded on a
//! [`Graph`] and differentiated with [`Graph::backward`]. Every op rejects
//! non-finite outputs with [`TensorError::NonFinite`].

mod error;
mod gradcheck;
mod graph;
mod ops;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::attention::AttentionParams;
pub use ops::norm::{BatchNormOptions, BatchNormStats};
pub use real::Real;
pub use tensor::Tensor;
