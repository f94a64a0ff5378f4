use crate::error::Result;
use crate::ops::{self, BatchNormStats, Conv2dGeometry, LabelMap};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Graph;

/// Immediate evaluation; values are plain tensors and nothing is recorded.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<T: Scalar> Graph<T> for Eager {
    type Var = Tensor<T>;

    fn shape(&self, v: &Tensor<T>) -> Vec<usize> {
        v.shape().to_vec()
    }

    fn value(&self, v: &Tensor<T>) -> Option<Tensor<T>> {
        Some(v.clone())
    }

    fn param(&mut self, _name: &str, value: &Tensor<T>) -> Tensor<T> {
        value.clone()
    }

    fn constant(&mut self, value: Tensor<T>) -> Tensor<T> {
        value
    }

    fn matmul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::matmul(a, b)
    }

    fn softmax(&mut self, x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        ops::softmax(x, axis)
    }

    fn permute(&mut self, x: &Tensor<T>, order: &[usize]) -> Result<Tensor<T>> {
        ops::permute(x, order)
    }

    fn reshape(&mut self, x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        x.reshape(shape)
    }

    fn concat(&mut self, parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        ops::concat(&refs, axis)
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::add(a, b)
    }

    fn sub(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::sub(a, b)
    }

    fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::mul(a, b)
    }

    fn scale(&mut self, x: &Tensor<T>, s: f64) -> Result<Tensor<T>> {
        Ok(ops::scale(x, T::cast(s)))
    }

    fn sigmoid(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::sigmoid(x))
    }

    fn relu6(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::relu6(x))
    }

    fn sum_axis(&mut self, x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        ops::sum_axis(x, axis)
    }

    fn max_axis(&mut self, x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        Ok(ops::max_axis(x, axis)?.0)
    }

    fn sum_all(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::sum_axis(&x.reshape(vec![x.len()])?, 0)
    }

    fn conv2d(
        &mut self,
        x: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        geom: Conv2dGeometry,
    ) -> Result<Tensor<T>> {
        ops::conv2d(x, weight, bias, geom)
    }

    fn batchnorm(
        &mut self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        stats: &BatchNormStats<T>,
    ) -> Result<Tensor<T>> {
        ops::batchnorm(x, gamma, beta, stats)
    }

    fn bilinear_resize(&mut self, x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        ops::bilinear_resize(x, out_h, out_w)
    }

    fn avg_pool2d(&mut self, x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
        ops::avg_pool2d(x, k, stride)
    }

    fn cross_entropy(&mut self, logits: &Tensor<T>, labels: &LabelMap) -> Result<(Tensor<T>, usize)> {
        let (l, n) = ops::cross_entropy(logits, labels)?;
        Ok((Tensor::scalar(l), n))
    }

    fn kl_divergence(&mut self, student: &Tensor<T>, teacher: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(ops::kl_divergence(student, teacher)?))
    }

    fn neg_cosine(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(ops::neg_cosine(a, b)?))
    }
}
