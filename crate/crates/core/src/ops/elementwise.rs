use crate::cost::{self, formulas};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

/// Result shape of broadcasting `a` against `b`. The shorter shape is
/// left-padded with ones; each dim pair must be equal or contain a 1.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(a), pad(b));
    pa.iter()
        .zip(&pb)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::dim(
                "broadcast",
                format!("shapes {a:?} and {b:?} are not broadcast compatible"),
            )),
        })
        .collect()
}

/// Strides of `shape` seen through `out` (zero on broadcast dims).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let pad = out.len() - shape.len();
    let own = strides(shape);
    (0..out.len())
        .map(|d| {
            if d < pad || shape[d - pad] == 1 {
                0
            } else {
                own[d - pad]
            }
        })
        .collect()
}

fn broadcast_zip<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let n = numel(&out_shape);
    let (da, db) = (a.data(), b.data());
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..n {
        out.push(f(da[oa], db[ob]));
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Sums `grad` down to `shape`, undoing a broadcast.
pub fn reduce_to_shape<T: Scalar>(grad: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if grad.shape() == shape {
        return Ok(grad.clone());
    }
    let out_shape = grad.shape();
    if broadcast_shape(shape, out_shape)? != out_shape {
        return Err(Error::dim(
            "reduce_to_shape",
            format!("{shape:?} does not broadcast to {out_shape:?}"),
        ));
    }
    let st = broadcast_strides(shape, out_shape);
    let mut out = vec![T::zero(); numel(shape)];
    let mut idx = vec![0usize; out_shape.len()];
    let mut o = 0usize;
    for &g in grad.data() {
        out[o] += g;
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            o += st[d];
            if idx[d] < out_shape[d] {
                break;
            }
            o -= st[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Ok(Tensor::from_parts(shape.to_vec(), out))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let out = broadcast_zip(a, b, |x, y| x + y)?;
    cost::record(formulas::elementwise(out.len()));
    Ok(out)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let out = broadcast_zip(a, b, |x, y| x - y)?;
    cost::record(formulas::elementwise(out.len()));
    Ok(out)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let out = broadcast_zip(a, b, |x, y| x * y)?;
    cost::record(formulas::elementwise(out.len()));
    Ok(out)
}

/// [`mul`] without cost accounting, for use inside backward passes.
pub(crate) fn mul_uncounted<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast_zip(a, b, |x, y| x * y)
}

pub fn scale<T: Scalar>(x: &Tensor<T>, s: T) -> Tensor<T> {
    cost::record(formulas::elementwise(x.len()));
    x.map(|v| v * s)
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    cost::record(formulas::transcendental(x.len()));
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Takes the forward output `y`: `dx = g·y·(1−y)`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(grad, |s, g| g * s * (T::one() - s))
}

/// `min(max(x, 0), 6)`. Comparisons only, so no MACs are charged.
pub fn relu6<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let six = T::cast(6.0);
    x.map(|v| v.max(T::zero()).min(six))
}

/// Gradient passes where `0 < x < 6`.
pub fn relu6_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let six = T::cast(6.0);
    x.zip_map(grad, |v, g| if v > T::zero() && v < six { g } else { T::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[3, 1, 4], &[2, 1]).unwrap(), vec![3, 2, 4]);
        assert_eq!(broadcast_shape(&[5], &[2, 5]).unwrap(), vec![2, 5]);
        assert!(broadcast_shape(&[3], &[4]).is_err());
    }

    #[test]
    fn row_plus_column() {
        let col = t(&[2, 1], &[10.0, 20.0]);
        let row = t(&[1, 3], &[1.0, 2.0, 3.0]);
        let s = add(&col, &row).unwrap();
        assert_eq!(s.shape(), &[2, 3]);
        assert_eq!(s.data(), &[11., 12., 13., 21., 22., 23.]);
        assert_eq!(reduce_to_shape(&s, &[1, 3]).unwrap().data(), &[32., 34., 36.]);
        assert_eq!(reduce_to_shape(&s, &[2, 1]).unwrap().data(), &[36., 66.]);
    }

    #[test]
    fn relu6_clips() {
        let x = t(&[4], &[-1.0, 3.0, 6.0, 9.0]);
        assert_eq!(relu6(&x).data(), &[0.0, 3.0, 6.0, 6.0]);
    }

    #[test]
    fn sigmoid_midpoint() {
        let y = sigmoid(&t(&[1], &[0.0]));
        assert_eq!(y.data()[0], 0.5);
    }
}
