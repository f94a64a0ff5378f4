use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ops::{self, BatchNormStats, Conv2dGeometry, LabelMap};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Graph;

/// Maps the output cotangent of one op to one cotangent per input, each
/// shaped like the corresponding forward input.
pub type VjpFn<T> = Box<dyn Fn(&Tensor<T>) -> Result<Vec<Tensor<T>>>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Leaf(String),
    Constant,
    Op(&'static str),
}

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<usize>,
    vjp: Option<VjpFn<T>>,
    kind: NodeKind,
    needs_grad: bool,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TapeVar(usize);

impl TapeVar {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Reverse-mode recorder. Nodes are appended in execution order, so the
/// list is topologically sorted by construction.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaves: BTreeMap<String, usize>,
    scope: String,
    trainable: bool,
    fault: Option<&'static str>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            leaves: BTreeMap::new(),
            scope: String::new(),
            trainable: true,
            fault: None,
        }
    }

    /// Flips the sign of the first input cotangent of every `op` node.
    /// Exists so gradient checks can be shown to catch a broken VJP.
    pub fn with_wrong_vjp(mut self, op: &'static str) -> Self {
        self.fault = Some(op);
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Handle of the node at `index` in execution order.
    pub fn var(&self, index: usize) -> Option<TapeVar> {
        (index < self.nodes.len()).then_some(TapeVar(index))
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self, v: TapeVar) -> &NodeKind {
        &self.nodes[v.0].kind
    }

    pub fn inputs(&self, v: TapeVar) -> &[usize] {
        &self.nodes[v.0].inputs
    }

    pub fn get(&self, v: TapeVar) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Names of all differentiable leaves, in name order.
    pub fn leaf_names(&self) -> Vec<String> {
        self.leaves.keys().cloned().collect()
    }

    fn push(&mut self, value: Tensor<T>, kind: NodeKind, inputs: Vec<usize>, vjp: Option<VjpFn<T>>, needs_grad: bool) -> TapeVar {
        self.nodes.push(Node {
            value,
            inputs,
            vjp,
            kind,
            needs_grad,
        });
        TapeVar(self.nodes.len() - 1)
    }

    fn op(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        inputs: &[TapeVar],
        vjp: impl Fn(&Tensor<T>) -> Result<Vec<Tensor<T>>> + 'static,
    ) -> TapeVar {
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        let needs_grad = ids.iter().any(|&i| self.nodes[i].needs_grad);
        let vjp: Option<VjpFn<T>> = if !needs_grad {
            None
        } else if self.fault == Some(name) {
            Some(Box::new(move |g| {
                let mut grads = vjp(g)?;
                grads[0] = grads[0].map(|v| -v);
                Ok(grads)
            }))
        } else {
            Some(Box::new(vjp))
        };
        self.push(value, NodeKind::Op(name), ids, vjp, needs_grad)
    }

    /// Reverse accumulation from `output`. `seed` defaults to ones and is
    /// required to match the output shape when given. Returns a gradient
    /// for every leaf, zero-filled when the leaf did not reach `output`.
    pub fn backward(&self, output: TapeVar, seed: Option<&Tensor<T>>) -> Result<BTreeMap<String, Tensor<T>>> {
        let mut out = BTreeMap::new();
        if self.nodes.is_empty() {
            return Ok(out);
        }
        let out_shape = self.nodes[output.0].value.shape();
        let seed = match seed {
            Some(s) if s.shape() != out_shape => {
                return Err(Error::dim(
                    "backward",
                    format!("seed {:?} does not match output {:?}", s.shape(), out_shape),
                ))
            }
            Some(s) => s.clone(),
            None if out_shape == [1] => Tensor::scalar(T::one()),
            None => {
                return Err(Error::Argument(format!(
                    "backward from non-scalar output {out_shape:?} needs an explicit seed"
                )))
            }
        };
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let NodeKind::Leaf(_) = node.kind {
                grads[id] = Some(g);
                continue;
            }
            let Some(vjp) = &node.vjp else { continue };
            let input_grads = vjp(&g)?;
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (&inp, ig) in node.inputs.iter().zip(input_grads) {
                if !self.nodes[inp].needs_grad {
                    continue;
                }
                debug_assert_eq!(ig.shape(), self.nodes[inp].value.shape());
                grads[inp] = Some(match grads[inp].take() {
                    Some(acc) => acc.zip_map(&ig, |a, b| a + b)?,
                    None => ig,
                });
            }
        }
        for (name, &id) in &self.leaves {
            let g = grads
                .get_mut(id)
                .and_then(Option::take)
                .map(Ok)
                .unwrap_or_else(|| Tensor::zeros(self.nodes[id].value.shape().to_vec()))?;
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

impl<T: Scalar> Graph<T> for Tape<T> {
    type Var = TapeVar;

    fn shape(&self, v: &TapeVar) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    fn value(&self, v: &TapeVar) -> Option<Tensor<T>> {
        Some(self.nodes[v.0].value.clone())
    }

    fn param(&mut self, name: &str, value: &Tensor<T>) -> TapeVar {
        if !self.trainable {
            return self.constant(value.clone());
        }
        let full = format!("{}{}", self.scope, name);
        if let Some(&id) = self.leaves.get(&full) {
            return TapeVar(id);
        }
        let v = self.push(value.clone(), NodeKind::Leaf(full.clone()), vec![], None, true);
        self.leaves.insert(full, v.0);
        v
    }

    fn constant(&mut self, value: Tensor<T>) -> TapeVar {
        self.push(value, NodeKind::Constant, vec![], None, false)
    }

    fn set_scope(&mut self, scope: &str) {
        self.scope = scope.to_string();
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    fn matmul(&mut self, a: &TapeVar, b: &TapeVar) -> Result<TapeVar> {
        let (av, bv) = (self.get(*a).clone(), self.get(*b).clone());
        let y = ops::matmul(&av, &bv)?;
        Ok(self.op("matmul", y, &[*a, *b], move |g| {
            let (da, db) = ops::matmul_backward(&av, &bv, g)?;
            Ok(vec![da, db])
        }))
    }

    fn softmax(&mut self, x: &TapeVar, axis: usize) -> Result<TapeVar> {
        let y = ops::softmax(self.get(*x), axis)?;
        let s = y.clone();
        Ok(self.op("softmax", y, &[*x], move |g| {
            Ok(vec![ops::softmax_backward(&s, axis, g)])
        }))
    }

    fn permute(&mut self, x: &TapeVar, order: &[usize]) -> Result<TapeVar> {
        let y = ops::permute(self.get(*x), order)?;
        let inv = ops::inverse_permutation(order);
        Ok(self.op("permute", y, &[*x], move |g| Ok(vec![ops::permute(g, &inv)?])))
    }

    fn reshape(&mut self, x: &TapeVar, shape: &[usize]) -> Result<TapeVar> {
        let in_shape = self.shape(x);
        let y = self.get(*x).reshape(shape)?;
        Ok(self.op("reshape", y, &[*x], move |g| Ok(vec![g.reshape(in_shape.clone())?])))
    }

    fn concat(&mut self, parts: &[TapeVar], axis: usize) -> Result<TapeVar> {
        let values: Vec<Tensor<T>> = parts.iter().map(|p| self.get(*p).clone()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().collect();
        let y = ops::concat(&refs, axis)?;
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        Ok(self.op("concat", y, parts, move |g| {
            let mut start = 0;
            lens.iter()
                .map(|&len| {
                    let piece = ops::narrow(g, axis, start, len);
                    start += len;
                    piece
                })
                .collect()
        }))
    }

    fn add(&mut self, a: &TapeVar, b: &TapeVar) -> Result<TapeVar> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let y = ops::add(self.get(*a), self.get(*b))?;
        Ok(self.op("add", y, &[*a, *b], move |g| {
            Ok(vec![ops::reduce_to_shape(g, &sa)?, ops::reduce_to_shape(g, &sb)?])
        }))
    }

    fn sub(&mut self, a: &TapeVar, b: &TapeVar) -> Result<TapeVar> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let y = ops::sub(self.get(*a), self.get(*b))?;
        Ok(self.op("sub", y, &[*a, *b], move |g| {
            Ok(vec![
                ops::reduce_to_shape(g, &sa)?,
                ops::reduce_to_shape(&g.map(|v| -v), &sb)?,
            ])
        }))
    }

    fn mul(&mut self, a: &TapeVar, b: &TapeVar) -> Result<TapeVar> {
        let (av, bv) = (self.get(*a).clone(), self.get(*b).clone());
        let y = ops::mul(&av, &bv)?;
        Ok(self.op("mul", y, &[*a, *b], move |g| {
            let out_shape = g.shape();
            let ga = ops::mul_uncounted(g, &bv)?;
            let gb = ops::mul_uncounted(g, &av)?;
            debug_assert_eq!(ga.shape(), out_shape);
            Ok(vec![
                ops::reduce_to_shape(&ga, av.shape())?,
                ops::reduce_to_shape(&gb, bv.shape())?,
            ])
        }))
    }

    fn scale(&mut self, x: &TapeVar, s: f64) -> Result<TapeVar> {
        let y = ops::scale(self.get(*x), T::cast(s));
        Ok(self.op("scale", y, &[*x], move |g| Ok(vec![g.map(|v| v * T::cast(s))])))
    }

    fn sigmoid(&mut self, x: &TapeVar) -> Result<TapeVar> {
        let y = ops::sigmoid(self.get(*x));
        let s = y.clone();
        Ok(self.op("sigmoid", y, &[*x], move |g| Ok(vec![ops::sigmoid_backward(&s, g)?])))
    }

    fn relu6(&mut self, x: &TapeVar) -> Result<TapeVar> {
        let xv = self.get(*x).clone();
        let y = ops::relu6(&xv);
        Ok(self.op("relu6", y, &[*x], move |g| Ok(vec![ops::relu6_backward(&xv, g)?])))
    }

    fn sum_axis(&mut self, x: &TapeVar, axis: usize) -> Result<TapeVar> {
        let in_shape = self.shape(x);
        let y = ops::sum_axis(self.get(*x), axis)?;
        Ok(self.op("sum_axis", y, &[*x], move |g| {
            Ok(vec![ops::sum_axis_backward(&in_shape, axis, g)])
        }))
    }

    fn max_axis(&mut self, x: &TapeVar, axis: usize) -> Result<TapeVar> {
        let in_shape = self.shape(x);
        let (y, arg) = ops::max_axis(self.get(*x), axis)?;
        Ok(self.op("max_axis", y, &[*x], move |g| {
            Ok(vec![ops::max_axis_backward(&in_shape, axis, &arg, g)])
        }))
    }

    fn sum_all(&mut self, x: &TapeVar) -> Result<TapeVar> {
        let xv = self.get(*x);
        let in_shape = xv.shape().to_vec();
        let y = ops::sum_axis(&xv.reshape(vec![xv.len()])?, 0)?;
        Ok(self.op("sum_all", y, &[*x], move |g| {
            Ok(vec![Tensor::full(in_shape.clone(), g.data()[0])?])
        }))
    }

    fn conv2d(
        &mut self,
        x: &TapeVar,
        weight: &TapeVar,
        bias: Option<&TapeVar>,
        geom: Conv2dGeometry,
    ) -> Result<TapeVar> {
        let (xv, wv) = (self.get(*x).clone(), self.get(*weight).clone());
        let bv = bias.map(|b| self.get(*b).clone());
        let y = ops::conv2d(&xv, &wv, bv.as_ref(), geom)?;
        let mut inputs = vec![*x, *weight];
        inputs.extend(bias.copied());
        let has_bias = bias.is_some();
        Ok(self.op("conv2d", y, &inputs, move |g| {
            let (dx, dw, db) = ops::conv2d_backward(&xv, &wv, has_bias, geom, g)?;
            let mut out = vec![dx, dw];
            out.extend(db);
            Ok(out)
        }))
    }

    fn batchnorm(
        &mut self,
        x: &TapeVar,
        gamma: &TapeVar,
        beta: &TapeVar,
        stats: &BatchNormStats<T>,
    ) -> Result<TapeVar> {
        let (xv, gv) = (self.get(*x).clone(), self.get(*gamma).clone());
        let y = ops::batchnorm(&xv, &gv, self.get(*beta), stats)?;
        let stats = stats.clone();
        Ok(self.op("batchnorm", y, &[*x, *gamma, *beta], move |g| {
            let (dx, dg, db) = ops::batchnorm_backward(&xv, &gv, &stats, g);
            Ok(vec![dx, dg, db])
        }))
    }

    fn bilinear_resize(&mut self, x: &TapeVar, out_h: usize, out_w: usize) -> Result<TapeVar> {
        let in_shape = self.shape(x);
        let y = ops::bilinear_resize(self.get(*x), out_h, out_w)?;
        Ok(self.op("bilinear_resize", y, &[*x], move |g| {
            Ok(vec![ops::bilinear_resize_backward(&in_shape, g)])
        }))
    }

    fn avg_pool2d(&mut self, x: &TapeVar, k: usize, stride: usize) -> Result<TapeVar> {
        let in_shape = self.shape(x);
        let y = ops::avg_pool2d(self.get(*x), k, stride)?;
        Ok(self.op("avg_pool2d", y, &[*x], move |g| {
            Ok(vec![ops::avg_pool2d_backward(&in_shape, k, stride, g)])
        }))
    }

    fn cross_entropy(&mut self, logits: &TapeVar, labels: &LabelMap) -> Result<(TapeVar, usize)> {
        let lv = self.get(*logits).clone();
        let (loss, n) = ops::cross_entropy(&lv, labels)?;
        let labels = labels.clone();
        let v = self.op("cross_entropy", Tensor::scalar(loss), &[*logits], move |g| {
            Ok(vec![ops::cross_entropy_backward(&lv, &labels, g.data()[0])])
        });
        Ok((v, n))
    }

    fn kl_divergence(&mut self, student: &TapeVar, teacher: &TapeVar) -> Result<TapeVar> {
        let (sv, tv) = (self.get(*student).clone(), self.get(*teacher).clone());
        let loss = ops::kl_divergence(&sv, &tv)?;
        Ok(self.op("kl_divergence", Tensor::scalar(loss), &[*student, *teacher], move |g| {
            let (ds, dt) = ops::kl_divergence_backward(&sv, &tv, g.data()[0]);
            Ok(vec![ds, dt])
        }))
    }

    fn neg_cosine(&mut self, a: &TapeVar, b: &TapeVar) -> Result<TapeVar> {
        let (av, bv) = (self.get(*a).clone(), self.get(*b).clone());
        let loss = ops::neg_cosine(&av, &bv)?;
        Ok(self.op("neg_cosine", Tensor::scalar(loss), &[*a, *b], move |g| {
            let (da, db) = ops::neg_cosine_backward(&av, &bv, g.data()[0]);
            Ok(vec![da, db])
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param("x", &Tensor::from_f64(vec![2, 2], &[1., 2., 3., 4.]).unwrap());
        let s = tape.sum_all(&x).unwrap();
        let g = tape.backward(s, None).unwrap();
        assert!(g["x"].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param("x", &Tensor::from_f64(vec![3], &[1., 2., 3.]).unwrap());
        let sq = tape.mul(&x, &x).unwrap();
        let s = tape.sum_all(&sq).unwrap();
        let g = tape.backward(s, None).unwrap();
        assert_eq!(g["x"].data(), &[2., 4., 6.]);
    }

    #[test]
    fn unused_leaf_gets_zeros_and_empty_tape_gives_empty_map() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param("x", &Tensor::ones(vec![2]).unwrap());
        tape.param("unused", &Tensor::ones(vec![3]).unwrap());
        let s = tape.sum_all(&x).unwrap();
        let g = tape.backward(s, None).unwrap();
        assert_eq!(g["unused"], Tensor::zeros(vec![3]).unwrap());
        let empty = Tape::<f64>::new();
        assert!(empty.backward(TapeVar(0), None).unwrap().is_empty());
    }

    #[test]
    fn scoped_params_are_distinct() {
        let mut tape = Tape::<f64>::new();
        let v = Tensor::ones(vec![1]).unwrap();
        let a = tape.param("w", &v);
        tape.set_scope("teacher.");
        let b = tape.param("w", &v);
        assert_ne!(a, b);
        assert_eq!(tape.leaf_names(), vec!["teacher.w".to_string(), "w".to_string()]);
    }
}
