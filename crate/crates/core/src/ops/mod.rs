//! Pure numeric kernels.
//!
//! Forward functions validate shapes, record their MAC cost and return a
//! fresh tensor. The matching `*_backward` functions compute
//! vector-Jacobian products and record nothing.

mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod reduce;
mod shape;

pub use conv::{
    avg_pool2d, avg_pool2d_backward, avg_pool2d_shape, bilinear_resize, bilinear_resize_backward,
    conv2d, conv2d_backward, conv2d_shape, linear_interp_weights, Conv2dGeometry, InterpTap,
};
pub(crate) use elementwise::mul_uncounted;
pub use elementwise::{
    add, broadcast_shape, mul, reduce_to_shape, relu6, relu6_backward, scale, sigmoid,
    sigmoid_backward, sub,
};
pub use linalg::{matmul, matmul_backward, matmul_shape, transpose_last};
pub use loss::{
    cross_entropy, cross_entropy_backward, kl_divergence, kl_divergence_backward, neg_cosine,
    neg_cosine_backward, LabelMap, IGNORE_INDEX,
};
pub use norm::{batchnorm, batchnorm_backward, BatchNormStats};
pub use reduce::{
    max_axis, max_axis_backward, softmax, softmax_backward, sum_axis, sum_axis_backward,
};
pub use shape::{concat, concat_shape, narrow, permute, permute_shape, inverse_permutation};

use crate::error::{Error, Result};

pub(crate) fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(Error::Argument(format!(
            "{op}: axis {axis} out of range for rank {rank}"
        )));
    }
    Ok(())
}

/// `(outer, len, inner)` split of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
