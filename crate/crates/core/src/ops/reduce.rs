use crate::cost::{self, formulas};
use crate::error::Result;
use crate::scalar::{total, Scalar};
use crate::tensor::Tensor;

use super::{axis_split, check_axis};

fn keepdim_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

/// Sum along `axis`, keeping it as a size-1 dim.
pub fn sum_axis<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("sum_axis", axis, x.rank())?;
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for i in 0..n {
            let row = &src[(o * n + i) * inner..(o * n + i + 1) * inner];
            for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    cost::record(formulas::reduce_sum(x.len()));
    Ok(Tensor::from_parts(keepdim_shape(x.shape(), axis), out))
}

/// Broadcasts the keepdim gradient back along `axis`.
pub fn sum_axis_backward<T: Scalar>(
    in_shape: &[usize],
    axis: usize,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let (outer, n, inner) = axis_split(in_shape, axis);
    let g = grad.data();
    let mut out = Vec::with_capacity(outer * n * inner);
    for o in 0..outer {
        for _ in 0..n {
            out.extend_from_slice(&g[o * inner..(o + 1) * inner]);
        }
    }
    Tensor::from_parts(in_shape.to_vec(), out)
}

/// Max along `axis` (keepdim) with the winning index for each output.
/// Ties go to the first occurrence.
pub fn max_axis<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    check_axis("max_axis", axis, x.rank())?;
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let src = x.data();
    let mut vals = Vec::with_capacity(outer * inner);
    let mut arg = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for j in 0..inner {
            let mut best = 0;
            let mut bv = src[o * n * inner + j];
            for i in 1..n {
                let v = src[(o * n + i) * inner + j];
                if v > bv {
                    bv = v;
                    best = i;
                }
            }
            vals.push(bv);
            arg.push(best);
        }
    }
    Ok((Tensor::from_parts(keepdim_shape(x.shape(), axis), vals), arg))
}

/// Routes each gradient to the argmax position.
pub fn max_axis_backward<T: Scalar>(
    in_shape: &[usize],
    axis: usize,
    argmax: &[usize],
    grad: &Tensor<T>,
) -> Tensor<T> {
    let (outer, n, inner) = axis_split(in_shape, axis);
    let mut out = vec![T::zero(); outer * n * inner];
    for o in 0..outer {
        for j in 0..inner {
            let k = o * inner + j;
            out[(o * n + argmax[k]) * inner + j] = grad.data()[k];
        }
    }
    Tensor::from_parts(in_shape.to_vec(), out)
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("softmax", axis, x.rank())?;
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| (o * n + i) * inner + j;
            let m = (0..n).map(|i| src[at(i)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for i in 0..n {
                let e = (src[at(i)] - m).exp();
                out[at(i)] = e;
                z += e;
            }
            for i in 0..n {
                out[at(i)] /= z;
            }
        }
    }
    cost::record(formulas::transcendental(x.len()));
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Takes the forward output `s`: `dx = s ⊙ (g − Σ_axis g⊙s)`.
pub fn softmax_backward<T: Scalar>(s: &Tensor<T>, axis: usize, grad: &Tensor<T>) -> Tensor<T> {
    let (outer, n, inner) = axis_split(s.shape(), axis);
    let (sv, g) = (s.data(), grad.data());
    let mut out = vec![T::zero(); s.len()];
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| (o * n + i) * inner + j;
            let dot: T = total((0..n).map(|i| g[at(i)] * sv[at(i)]));
            for i in 0..n {
                out[at(i)] = sv[at(i)] * (g[at(i)] - dot);
            }
        }
    }
    Tensor::from_parts(s.shape().to_vec(), out)
}
