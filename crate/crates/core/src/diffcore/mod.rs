//! Dense tensors with tape-based reverse-mode differentiation and an AdamW
//! optimizer.
//!
//! A forward pass is recorded on a [`Tape`]; parameters are bound onto it
//! by reference from a [`ParamSet`], so building a tape never copies
//! weights. [`Tape::backward`] returns [`Gradients`] which are then folded
//! into the parameter accumulators (`+=`, cleared by
//! [`ParamSet::zero_grad`]).

mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use optim::{AdamW, AdamWConfig};
pub use params::{BoundParams, ParamSet};
pub use scalar::{DType, Float};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("optimizer state error: {0}")]
    State(String),
}
