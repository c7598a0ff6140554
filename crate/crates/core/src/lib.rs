//! Monocular depth estimation with gated large-kernel attention and globally
//! predicted depth bins, built on a small reverse-mode autodiff core.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix the two precisions used in practice: `f32` for training
//! and inference, `f64` for finite-difference gradient checks.

// Graph ops return `Result`, so they cannot be the std operator traits, and
// `!(a < b)` is used on purpose to reject NaN.
#![allow(clippy::should_implement_trait, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod autodiff;
pub mod data;
mod error;
pub mod gbpm;
pub mod glkam;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod param;
pub mod probe;
mod scalar;
mod tensor;
pub mod train;

pub use autodiff::{Activation, Gradients, Tape, Var};
pub use error::{Error, Result};
pub use param::{ParamGrads, ParamId, ParamStore};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type DepthNet32 = model::DepthNet<f32>;
pub type DepthNet64 = model::DepthNet<f64>;
pub type DepthSample32 = data::DepthSample<f32>;
pub type DepthSample64 = data::DepthSample<f64>;
