use crate::cost::{self, formulas};
use crate::error::{Error, Result};
use crate::scalar::{total, Scalar};
use crate::tensor::Tensor;

/// Frozen per-channel statistics for inference-mode batch norm.
#[derive(Clone)]
pub struct BatchNormStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    pub eps: f64,
}

fn check<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, st: &BatchNormStats<T>) -> Result<usize> {
    let c = x.shape()[0];
    for (name, t) in [("gamma", gamma), ("beta", beta), ("mean", &st.mean), ("var", &st.var)] {
        if t.shape() != [c] {
            return Err(Error::dim(
                "batchnorm",
                format!("{name} has shape {:?}, expected [{c}]", t.shape()),
            ));
        }
    }
    Ok(c)
}

/// `y = γ·(x − μ)/√(σ² + ε) + β` with channels on axis 0.
pub fn batchnorm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &BatchNormStats<T>,
) -> Result<Tensor<T>> {
    let c = check(x, gamma, beta, stats)?;
    let per = x.len() / c;
    let eps = T::cast(stats.eps);
    let mut out = Vec::with_capacity(x.len());
    for ch in 0..c {
        let inv = T::one() / (stats.var.data()[ch] + eps).sqrt();
        let s = gamma.data()[ch] * inv;
        let b = beta.data()[ch] - stats.mean.data()[ch] * s;
        out.extend(x.data()[ch * per..(ch + 1) * per].iter().map(|&v| v * s + b));
    }
    cost::record(formulas::batchnorm(x.len()));
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// `(dx, dγ, dβ)`; statistics are constants.
pub fn batchnorm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &BatchNormStats<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = x.shape()[0];
    let per = x.len() / c;
    let eps = T::cast(stats.eps);
    let mut dx = Vec::with_capacity(x.len());
    let mut dg = Vec::with_capacity(c);
    let mut db = Vec::with_capacity(c);
    for ch in 0..c {
        let inv = T::one() / (stats.var.data()[ch] + eps).sqrt();
        let mu = stats.mean.data()[ch];
        let xs = &x.data()[ch * per..(ch + 1) * per];
        let gs = &grad.data()[ch * per..(ch + 1) * per];
        let s = gamma.data()[ch] * inv;
        dx.extend(gs.iter().map(|&g| g * s));
        dg.push(total(xs.iter().zip(gs).map(|(&v, &g)| g * (v - mu) * inv)));
        db.push(total(gs.iter().copied()));
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(vec![c], dg),
        Tensor::from_parts(vec![c], db),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_stats_are_near_identity() {
        let x = Tensor::<f64>::from_f64(vec![2, 2], &[1.0, -2.0, 3.0, 4.0]).unwrap();
        let stats = BatchNormStats {
            mean: Tensor::zeros(vec![2]).unwrap(),
            var: Tensor::ones(vec![2]).unwrap(),
            eps: 0.0,
        };
        let y = batchnorm(&x, &Tensor::ones(vec![2]).unwrap(), &Tensor::zeros(vec![2]).unwrap(), &stats)
            .unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn normalizes_with_given_stats() {
        let x = Tensor::<f64>::from_f64(vec![1, 2], &[5.0, 9.0]).unwrap();
        let stats = BatchNormStats {
            mean: Tensor::from_f64(vec![1], &[1.0]).unwrap(),
            var: Tensor::from_f64(vec![1], &[4.0]).unwrap(),
            eps: 0.0,
        };
        let g = Tensor::from_f64(vec![1], &[3.0]).unwrap();
        let b = Tensor::from_f64(vec![1], &[0.5]).unwrap();
        let y = batchnorm(&x, &g, &b, &stats).unwrap();
        assert_eq!(y.data(), &[6.5, 12.5]);
    }
}
