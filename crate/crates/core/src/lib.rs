//! Squeeze-enhanced axial attention, a two-branch mobile segmentation
//! backbone built from it, and multi-resolution distillation losses, on a
//! small tensor core with reverse-mode differentiation and exact MAC
//! accounting.
//!
//! Everything numeric is generic over [`Scalar`] (`f32`, `f64`, or the
//! double-double [`Dd`] used by finite-difference oracles); the `*32` /
//! `*64` aliases below fix the precision for common uses.

pub mod analysis;
pub mod backbone;
pub mod cost;
pub mod dd;
pub mod distill;
pub mod error;
pub mod graph;
pub mod io;
pub mod nn;
pub mod ops;
pub mod scalar;
pub mod sea;
pub mod tensor;

pub use dd::Dd;
pub use error::{Error, Result};
pub use graph::{Eager, Graph, ShapeGraph, Tape, TapeVar};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
