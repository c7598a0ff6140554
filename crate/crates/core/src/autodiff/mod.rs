//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor).
//!
//! A [`Tape`] records one forward pass. Every operation appends a node whose
//! parents precede it, so node order is already a topological order and
//! backward is a single reverse sweep.

mod elementwise;
mod linalg;
mod reduce;
mod shape;
mod tape;

pub use elementwise::{Activation, BinaryKind};
pub use tape::{Gradients, Tape, Var};

pub(crate) use linalg::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
