//! Dense reverse-mode automatic differentiation.

mod check;
mod graph;
mod optim;
mod params;
mod tensor;

pub use check::{grad_check, grad_check_coords};
pub use graph::{sigmoid, Graph, Var, LAYER_NORM_EPS};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

pub(crate) use graph::quantile_loss_unchecked;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by {0}")]
    NonFiniteValue(String),
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[cfg(test)]
mod tests;
