//! Grid-free room impulse response reconstruction.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod diffcore;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod roomsim;
pub mod scenario;
pub mod training;

pub use matrix::Matrix;
