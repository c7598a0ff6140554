//! Layer vocabulary: convolutions, point-wise MLPs, normalization, pooling
//! and resampling.

mod conv;
mod linear;
mod norm;
mod pool;
mod resample;

pub use conv::{Conv2d, Conv2dSpec};
pub use linear::{Linear, Mlp};
pub use norm::{LayerNorm, LN_EPS};
pub use pool::{pool_bounds, PoolKind};
