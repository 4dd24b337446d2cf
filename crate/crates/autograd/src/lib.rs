//! Reverse-mode automatic differentiation over `ndarray` tensors.
//!
//! A [`Tape`] records a computation as it is built; [`Tape::backward`]
//! replays it in reverse to produce gradients with respect to any
//! recorded node. The element type is generic over [`Scalar`] so the
//! same graph code runs in `f32` for production and `f64` for
//! finite-difference verification.

mod frozen;
pub mod gradcheck;
pub mod kernels;
mod nn;
mod ops;
mod scalar;
mod tape;

pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
