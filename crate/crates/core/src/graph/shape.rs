use std::marker::PhantomData;

use crate::cost::{self, formulas};
use crate::error::{Error, Result};
use crate::ops::{self, BatchNormStats, Conv2dGeometry, LabelMap};
use crate::scalar::Scalar;
use crate::tensor::{check_shape, numel, Tensor};

use super::Graph;

/// Shape-only executor. Each op validates shapes exactly as the numeric
/// kernel would and records the same MAC count, without touching data.
#[derive(Clone, Copy, Debug, Default)]
pub struct ShapeGraph<T = f64>(PhantomData<T>);

impl<T> ShapeGraph<T> {
    pub fn new() -> Self {
        ShapeGraph(PhantomData)
    }
}

fn keepdim(shape: &[usize], axis: usize) -> Result<Vec<usize>> {
    ops::check_axis("reduce", axis, shape.len())?;
    let mut s = shape.to_vec();
    s[axis] = 1;
    Ok(s)
}

fn same(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::dim(op, format!("{a:?} vs {b:?}")));
    }
    if a.len() != 3 {
        return Err(Error::dim(op, format!("expected [K, H, W], got {a:?}")));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> for ShapeGraph<T> {
    type Var = Vec<usize>;

    fn shape(&self, v: &Vec<usize>) -> Vec<usize> {
        v.clone()
    }

    fn value(&self, _v: &Vec<usize>) -> Option<Tensor<T>> {
        None
    }

    fn param(&mut self, _name: &str, value: &Tensor<T>) -> Vec<usize> {
        value.shape().to_vec()
    }

    fn constant(&mut self, value: Tensor<T>) -> Vec<usize> {
        value.shape().to_vec()
    }

    fn matmul(&mut self, a: &Vec<usize>, b: &Vec<usize>) -> Result<Vec<usize>> {
        let (batch, m, k, n, out) = ops::matmul_shape(a, b)?;
        cost::record(formulas::matmul(batch, m, k, n));
        Ok(out)
    }

    fn softmax(&mut self, x: &Vec<usize>, axis: usize) -> Result<Vec<usize>> {
        ops::check_axis("softmax", axis, x.len())?;
        cost::record(formulas::transcendental(numel(x)));
        Ok(x.clone())
    }

    fn permute(&mut self, x: &Vec<usize>, order: &[usize]) -> Result<Vec<usize>> {
        ops::permute_shape(x, order)
    }

    fn reshape(&mut self, x: &Vec<usize>, shape: &[usize]) -> Result<Vec<usize>> {
        check_shape(shape)?;
        if numel(shape) != numel(x) {
            return Err(Error::dim("reshape", format!("cannot view {x:?} as {shape:?}")));
        }
        Ok(shape.to_vec())
    }

    fn concat(&mut self, parts: &[Vec<usize>], axis: usize) -> Result<Vec<usize>> {
        let shapes: Vec<&[usize]> = parts.iter().map(|p| p.as_slice()).collect();
        ops::concat_shape(&shapes, axis)
    }

    fn add(&mut self, a: &Vec<usize>, b: &Vec<usize>) -> Result<Vec<usize>> {
        let out = ops::broadcast_shape(a, b)?;
        cost::record(formulas::elementwise(numel(&out)));
        Ok(out)
    }

    fn sub(&mut self, a: &Vec<usize>, b: &Vec<usize>) -> Result<Vec<usize>> {
        Graph::<T>::add(self, a, b)
    }

    fn mul(&mut self, a: &Vec<usize>, b: &Vec<usize>) -> Result<Vec<usize>> {
        Graph::<T>::add(self, a, b)
    }

    fn scale(&mut self, x: &Vec<usize>, _s: f64) -> Result<Vec<usize>> {
        cost::record(formulas::elementwise(numel(x)));
        Ok(x.clone())
    }

    fn sigmoid(&mut self, x: &Vec<usize>) -> Result<Vec<usize>> {
        cost::record(formulas::transcendental(numel(x)));
        Ok(x.clone())
    }

    fn relu6(&mut self, x: &Vec<usize>) -> Result<Vec<usize>> {
        Ok(x.clone())
    }

    fn sum_axis(&mut self, x: &Vec<usize>, axis: usize) -> Result<Vec<usize>> {
        let out = keepdim(x, axis)?;
        cost::record(formulas::reduce_sum(numel(x)));
        Ok(out)
    }

    fn max_axis(&mut self, x: &Vec<usize>, axis: usize) -> Result<Vec<usize>> {
        keepdim(x, axis)
    }

    fn sum_all(&mut self, x: &Vec<usize>) -> Result<Vec<usize>> {
        cost::record(formulas::reduce_sum(numel(x)));
        Ok(vec![1])
    }

    fn conv2d(
        &mut self,
        x: &Vec<usize>,
        weight: &Vec<usize>,
        bias: Option<&Vec<usize>>,
        geom: Conv2dGeometry,
    ) -> Result<Vec<usize>> {
        let out = ops::conv2d_shape(x, weight, geom)?;
        if let Some(b) = bias {
            if b.as_slice() != [out[0]] {
                return Err(Error::Config(format!(
                    "conv2d bias shape {b:?} does not match {} output channels",
                    out[0]
                )));
            }
        }
        cost::record(formulas::conv2d(out[0], x[0], geom.groups, weight[2], out[1], out[2]));
        Ok(out)
    }

    fn batchnorm(
        &mut self,
        x: &Vec<usize>,
        gamma: &Vec<usize>,
        beta: &Vec<usize>,
        stats: &BatchNormStats<T>,
    ) -> Result<Vec<usize>> {
        let c = x[0];
        for (name, s) in [
            ("gamma", gamma.as_slice()),
            ("beta", beta.as_slice()),
            ("mean", stats.mean.shape()),
            ("var", stats.var.shape()),
        ] {
            if s != [c] {
                return Err(Error::dim(
                    "batchnorm",
                    format!("{name} has shape {s:?}, expected [{c}]"),
                ));
            }
        }
        cost::record(formulas::batchnorm(numel(x)));
        Ok(x.clone())
    }

    fn bilinear_resize(&mut self, x: &Vec<usize>, out_h: usize, out_w: usize) -> Result<Vec<usize>> {
        let &[c, _, _] = x.as_slice() else {
            return Err(Error::dim("bilinear_resize", format!("expected [C, H, W], got {x:?}")));
        };
        if out_h == 0 || out_w == 0 {
            return Err(Error::Argument("bilinear_resize output dims must be positive".into()));
        }
        cost::record(formulas::bilinear(c * out_h * out_w));
        Ok(vec![c, out_h, out_w])
    }

    fn avg_pool2d(&mut self, x: &Vec<usize>, k: usize, stride: usize) -> Result<Vec<usize>> {
        let out = ops::avg_pool2d_shape(x, k, stride)?;
        cost::record(formulas::avg_pool(numel(&out), k));
        Ok(out)
    }

    fn cross_entropy(&mut self, logits: &Vec<usize>, labels: &LabelMap) -> Result<(Vec<usize>, usize)> {
        if logits.len() != 3 || logits[1..] != [labels.h, labels.w] {
            return Err(Error::dim(
                "cross_entropy",
                format!("logits {logits:?} vs labels {}x{}", labels.h, labels.w),
            ));
        }
        cost::record(formulas::transcendental(numel(logits)));
        Ok((vec![1], labels.valid_count()))
    }

    fn kl_divergence(&mut self, student: &Vec<usize>, teacher: &Vec<usize>) -> Result<Vec<usize>> {
        same("kl_divergence", student, teacher)?;
        cost::record(2 * formulas::transcendental(numel(student)));
        Ok(vec![1])
    }

    fn neg_cosine(&mut self, a: &Vec<usize>, b: &Vec<usize>) -> Result<Vec<usize>> {
        same("neg_cosine", a, b)?;
        cost::record(3 * formulas::elementwise(numel(a)));
        Ok(vec![1])
    }
}
