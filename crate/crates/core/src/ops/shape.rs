use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

use super::{axis_split, check_axis};

/// Output shape of `permute(x, order)`; checks `order` is a permutation.
pub fn permute_shape(shape: &[usize], order: &[usize]) -> Result<Vec<usize>> {
    let mut seen = vec![false; shape.len()];
    if order.len() != shape.len() {
        return Err(Error::Argument(format!(
            "permutation {order:?} does not match rank {}",
            shape.len()
        )));
    }
    for &o in order {
        if o >= shape.len() || seen[o] {
            return Err(Error::Argument(format!("{order:?} is not a permutation")));
        }
        seen[o] = true;
    }
    Ok(order.iter().map(|&o| shape[o]).collect())
}

pub fn inverse_permutation(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    inv
}

/// `out[i_0, .., i_n] = x[..]` with output dim `d` taken from input dim `order[d]`.
pub fn permute<T: Scalar>(x: &Tensor<T>, order: &[usize]) -> Result<Tensor<T>> {
    let out_shape = permute_shape(x.shape(), order)?;
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return Ok(x.clone());
    }
    let src_strides = strides(x.shape());
    let st: Vec<usize> = order.iter().map(|&o| src_strides[o]).collect();
    let src = x.data();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(src[off]);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            off += st[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= st[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn concat_shape(shapes: &[&[usize]], axis: usize) -> Result<Vec<usize>> {
    let first = shapes
        .first()
        .ok_or_else(|| Error::Argument("concat of zero tensors".into()))?;
    check_axis("concat", axis, first.len())?;
    let mut out = first.to_vec();
    out[axis] = 0;
    for s in shapes {
        let compatible = s.len() == first.len()
            && s.iter()
                .zip(first.iter())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(Error::dim(
                "concat",
                format!("{s:?} does not match {first:?} outside axis {axis}"),
            ));
        }
        out[axis] += s[axis];
    }
    Ok(out)
}

pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let shapes: Vec<&[usize]> = parts.iter().map(|p| p.shape()).collect();
    let out_shape = concat_shape(&shapes, axis)?;
    let (outer, _, inner) = axis_split(&out_shape, axis);
    let mut out = Vec::with_capacity(numel(&out_shape));
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Slice `[start, start + len)` along `axis`.
pub fn narrow<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    check_axis("narrow", axis, x.rank())?;
    let (outer, n, inner) = axis_split(x.shape(), axis);
    if len == 0 || start + len > n {
        return Err(Error::Argument(format!(
            "narrow [{start}, {}) outside axis of length {n}",
            start + len
        )));
    }
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Ok(Tensor::from_parts(shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_mapping() {
        let x = Tensor::<f64>::from_fn(vec![2, 3, 4], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64)
            .unwrap();
        let y = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        assert_eq!(y.get(&[3, 1, 2]), 123.0);
        let back = permute(&y, &inverse_permutation(&[2, 0, 1])).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn rejects_non_permutation() {
        let x = Tensor::<f64>::zeros(vec![2, 2]).unwrap();
        assert!(permute(&x, &[0, 0]).is_err());
        assert!(permute(&x, &[0]).is_err());
    }

    #[test]
    fn concat_then_narrow_roundtrip() {
        let a = Tensor::<f64>::from_fn(vec![2, 1, 3], |i| (i[0] * 3 + i[2]) as f64).unwrap();
        let b = Tensor::<f64>::from_fn(vec![2, 2, 3], |i| 100.0 + (i[1] * 3 + i[2]) as f64).unwrap();
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(narrow(&c, 1, 0, 1).unwrap(), a);
        assert_eq!(narrow(&c, 1, 1, 2).unwrap(), b);
    }
}
