//! One forward-pass vocabulary, three executors.
//!
//! Model code is written once against [`Graph`]. [`Eager`] evaluates
//! immediately with no bookkeeping, [`Tape`] additionally records a
//! vector-Jacobian product per op for reverse-mode differentiation, and
//! [`ShapeGraph`] propagates shapes only, charging the same MAC formulas as
//! the numeric kernels. The last one lets cost reports cover sizes whose
//! activations would not fit in memory.

mod eager;
mod shape;
mod tape;

pub use eager::Eager;
pub use shape::ShapeGraph;
pub use tape::{NodeKind, Tape, TapeVar, VjpFn};

use crate::error::Result;
use crate::ops::{BatchNormStats, Conv2dGeometry, LabelMap};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub trait Graph<T: Scalar> {
    type Var: Clone;

    fn shape(&self, v: &Self::Var) -> Vec<usize>;

    /// The concrete value, when the executor carries data.
    fn value(&self, v: &Self::Var) -> Option<Tensor<T>>;

    /// A named differentiable leaf. Requesting the same name twice yields
    /// the same leaf.
    fn param(&mut self, name: &str, value: &Tensor<T>) -> Self::Var;

    /// A value that receives no gradient.
    fn constant(&mut self, value: Tensor<T>) -> Self::Var;

    /// Prefix applied to subsequent [`Graph::param`] names.
    fn set_scope(&mut self, _scope: &str) {}

    /// When false, subsequent [`Graph::param`] calls produce constants.
    fn set_trainable(&mut self, _trainable: bool) {}

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn softmax(&mut self, x: &Self::Var, axis: usize) -> Result<Self::Var>;
    fn permute(&mut self, x: &Self::Var, order: &[usize]) -> Result<Self::Var>;
    fn reshape(&mut self, x: &Self::Var, shape: &[usize]) -> Result<Self::Var>;
    fn concat(&mut self, parts: &[Self::Var], axis: usize) -> Result<Self::Var>;
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn scale(&mut self, x: &Self::Var, s: f64) -> Result<Self::Var>;
    fn sigmoid(&mut self, x: &Self::Var) -> Result<Self::Var>;
    fn relu6(&mut self, x: &Self::Var) -> Result<Self::Var>;
    fn sum_axis(&mut self, x: &Self::Var, axis: usize) -> Result<Self::Var>;
    fn max_axis(&mut self, x: &Self::Var, axis: usize) -> Result<Self::Var>;
    /// Sum of every element, shape `[1]`.
    fn sum_all(&mut self, x: &Self::Var) -> Result<Self::Var>;
    fn conv2d(
        &mut self,
        x: &Self::Var,
        weight: &Self::Var,
        bias: Option<&Self::Var>,
        geom: Conv2dGeometry,
    ) -> Result<Self::Var>;
    fn batchnorm(
        &mut self,
        x: &Self::Var,
        gamma: &Self::Var,
        beta: &Self::Var,
        stats: &BatchNormStats<T>,
    ) -> Result<Self::Var>;
    fn bilinear_resize(&mut self, x: &Self::Var, out_h: usize, out_w: usize) -> Result<Self::Var>;
    fn avg_pool2d(&mut self, x: &Self::Var, k: usize, stride: usize) -> Result<Self::Var>;
    /// Mean cross-entropy (shape `[1]`) and the number of labelled positions.
    fn cross_entropy(&mut self, logits: &Self::Var, labels: &LabelMap) -> Result<(Self::Var, usize)>;
    /// `KL(softmax(teacher) ‖ softmax(student))`, position mean, shape `[1]`.
    fn kl_divergence(&mut self, student: &Self::Var, teacher: &Self::Var) -> Result<Self::Var>;
    /// Position mean of negative cosine similarity, shape `[1]`.
    fn neg_cosine(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
}

/// Reads a scalar (shape `[1]`) result from a data-carrying graph.
pub fn scalar_value<T: Scalar, G: Graph<T>>(g: &G, v: &G::Var) -> Option<T> {
    g.value(v).map(|t| t.data()[0])
}
