use crate::cost::{self, formulas};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `(batch, m, k, n, out_shape)` for a 2-D or batched 3-D product.
pub fn matmul_shape(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize, Vec<usize>)> {
    let mismatch = || Error::dim("matmul", format!("cannot multiply {a:?} by {b:?}"));
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((1, *m, *k, *n, vec![*m, *n])),
        ([ba, m, k], [bb, k2, n]) if ba == bb && k == k2 => {
            Ok((*ba, *m, *k, *n, vec![*ba, *m, *n]))
        }
        _ => Err(mismatch()),
    }
}

fn gemm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn matmul_raw<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, m, k, n, shape) = matmul_shape(a.shape(), b.shape())?;
    let mut out = vec![T::zero(); batch * m * n];
    for bi in 0..batch {
        gemm(
            &a.data()[bi * m * k..(bi + 1) * m * k],
            &b.data()[bi * k * n..(bi + 1) * k * n],
            &mut out[bi * m * n..(bi + 1) * m * n],
            m,
            k,
            n,
        );
    }
    Ok(Tensor::from_parts(shape, out))
}

/// `c[i][j] = Σ_k a[i][k]·b[k][j]`, optionally batched over a leading dim.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let out = matmul_raw(a, b)?;
    let (batch, m, k, n, _) = matmul_shape(a.shape(), b.shape())?;
    cost::record(formulas::matmul(batch, m, k, n));
    Ok(out)
}

/// Swaps the last two dims.
pub fn transpose_last<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let r = x.rank();
    assert!(r >= 2, "transpose_last needs rank >= 2");
    let (rows, cols) = (x.shape()[r - 2], x.shape()[r - 1]);
    let batch = x.len() / (rows * cols);
    let src = x.data();
    let mut out = Vec::with_capacity(x.len());
    for bi in 0..batch {
        let base = bi * rows * cols;
        for j in 0..cols {
            for i in 0..rows {
                out.push(src[base + i * cols + j]);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.swap(r - 2, r - 1);
    Tensor::from_parts(shape, out)
}

/// `(dA, dB) = (dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let da = matmul_raw(grad, &transpose_last(b))?;
    let db = matmul_raw(&transpose_last(a), grad)?;
    Ok((da, db))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        Tensor::from_fn(vec![m, n], |ij| {
            (0..k).map(|p| a.get(&[ij[0], p]) * b.get(&[p, ij[1]])).sum()
        })
        .unwrap()
    }

    #[test]
    fn identity_products() {
        let a = Tensor::<f64>::from_f64(vec![2, 2], &[1., 2., 3., 4.]).unwrap();
        let eye = Tensor::<f64>::from_f64(vec![2, 2], &[1., 0., 0., 1.]).unwrap();
        assert_eq!(matmul(&a, &eye).unwrap(), a);
        let col = Tensor::<f64>::from_f64(vec![2, 1], &[5., 7.]).unwrap();
        assert_eq!(matmul(&eye, &col).unwrap(), col);
    }

    #[test]
    fn matches_triple_loop() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::<f64>::uniform(vec![3, 4], -1.0, 1.0, &mut rng).unwrap();
        let b = Tensor::<f64>::uniform(vec![4, 2], -1.0, 1.0, &mut rng).unwrap();
        let diff = matmul(&a, &b).unwrap().max_abs_diff(&naive(&a, &b)).unwrap();
        assert!(diff < 1e-12);
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let a = Tensor::<f64>::zeros(vec![2, 3]).unwrap();
        let b = Tensor::<f64>::zeros(vec![2, 3]).unwrap();
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn records_macs() {
        let a = Tensor::<f64>::zeros(vec![3, 4]).unwrap();
        let b = Tensor::<f64>::zeros(vec![4, 5]).unwrap();
        let macs = crate::cost::count_macs(|| {
            matmul(&a, &b).unwrap();
        });
        assert_eq!(macs, 60);
    }
}
