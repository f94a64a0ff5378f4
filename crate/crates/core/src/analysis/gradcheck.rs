use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{scalar_value, Eager, Graph, Tape};
use crate::nn::ParamStore;
use crate::dd::Dd;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A scalar-valued computation over a parameter store, runnable on any
/// executor and element type. Inputs that should be checked are stored as
/// parameters too.
pub trait ScalarProgram {
    /// Returns a `[1]`-shaped result.
    fn run<T: Scalar, G: Graph<T>>(&self, g: &mut G, params: &ParamStore<T>) -> Result<G::Var>;
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Step used for element value `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

/// `(f(x0 + h) − f(x0 − h)) / 2h`, with the probe points and the quotient
/// formed in `S`.
fn central<S: Scalar>(mut f: impl FnMut(S) -> Result<S>, x0: f64, what: &dyn Fn() -> String) -> Result<f64> {
    let h = S::cast(fd_step(x0));
    let x = S::cast(x0);
    let up = f(x + h)?;
    let down = f(x - h)?;
    if !up.is_finite() || !down.is_finite() {
        return Err(Error::Oracle(format!("non-finite function value at {}", what())));
    }
    Ok(((up - down) / (h + h)).as_f64())
}

/// Central differences of `f` at `x`, one element at a time, evaluated in
/// the element type `S` of `f`. Elements not listed in `indices` (when
/// given) are left at zero.
pub fn numerical_gradient<S: Scalar>(
    mut f: impl FnMut(&Tensor<S>) -> Result<S>,
    x: &Tensor<f64>,
    indices: Option<&[usize]>,
) -> Result<Tensor<f64>> {
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut probe: Tensor<S> = x.cast();
    let mut grad = Tensor::zeros(x.shape().to_vec())?;
    for &i in idx {
        let x0 = x.data()[i];
        let d = central(
            |v| {
                probe.data_mut()[i] = v;
                f(&probe)
            },
            x0,
            &|| format!("element {i}"),
        )?;
        probe.data_mut()[i] = S::cast(x0);
        grad.data_mut()[i] = d;
    }
    Ok(grad)
}

/// Fixed random weighting `Σ wᵢ·yᵢ` that turns any output into a scalar
/// whose gradient exercises every element.
pub fn weighted_sum<T: Scalar, G: Graph<T>>(g: &mut G, y: &G::Var, seed: u64) -> Result<G::Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(Tensor::uniform(g.shape(y), -1.0, 1.0, &mut rng)?);
    let p = g.mul(y, &w)?;
    g.sum_all(&p)
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub threshold: f64,
    /// Elements sampled per tensor; every element when `None`.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
    /// Restricts the check to tensors whose names start with one of these.
    pub prefixes: Vec<String>,
    /// Builds the tape with a sign-flipped VJP for this op.
    pub wrong_vjp: Option<&'static str>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            threshold: 1e-5,
            max_per_tensor: None,
            seed: 0,
            prefixes: Vec::new(),
            wrong_vjp: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub argmax: usize,
    /// Analytic and numeric values at `argmax`.
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub threshold: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Compares 64-bit tape gradients with central differences for every
/// learnable tensor of `params` (filtered by `opts.prefixes`).
///
/// The differences are evaluated in double-double. In plain `f64` the
/// rounding noise of `f(x ± h)` at `h ≈ 1e-6` is around `1e-9` in the
/// quotient, which exceeds a `1e-5` relative bound on any gradient element
/// smaller than about `1e-4`, including those that are exactly zero.
pub fn gradcheck<P: ScalarProgram>(prog: &P, params: &ParamStore<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    if let Some(op) = opts.wrong_vjp {
        tape = tape.with_wrong_vjp(op);
    }
    let out = prog.run(&mut tape, params)?;
    let grads = tape.backward(out, None)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut store: ParamStore<Dd> = params.cast();
    let mut entries = Vec::new();
    let names: Vec<String> = params
        .learnable_names()
        .into_iter()
        .filter(|n| opts.prefixes.is_empty() || opts.prefixes.iter().any(|p| n.starts_with(p.as_str())))
        .collect();
    for name in names {
        let base = params.get(&name)?.clone();
        let zero = Tensor::zeros(base.shape().to_vec())?;
        let analytic = grads.get(&name).unwrap_or(&zero);
        let idx: Vec<usize> = match opts.max_per_tensor {
            Some(k) if k < base.len() => sample(&mut rng, base.len(), k).into_vec(),
            _ => (0..base.len()).collect(),
        };
        let mut worst = (0.0f64, 0usize);
        let mut at = (0.0f64, 0.0f64);
        for &i in &idx {
            let x0 = base.data()[i];
            let n = central(
                |v| {
                    store.get_mut(&name)?.data_mut()[i] = v;
                    eval(prog, &store)
                },
                x0,
                &|| format!("{name}[{i}]"),
            )?;
            store.get_mut(&name)?.data_mut()[i] = Dd::new(x0);
            let a = analytic.data()[i];
            let e = rel_error(a, n);
            if e > worst.0 || e.is_nan() {
                worst = (e, i);
                at = (a, n);
            }
        }
        entries.push(GradCheckEntry {
            name,
            max_rel_error: worst.0,
            argmax: worst.1,
            analytic: at.0,
            numeric: at.1,
            checked: idx.len(),
        });
    }
    let max_rel_error = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_error < opts.threshold && entries.iter().all(|e| !e.max_rel_error.is_nan()),
        entries,
        threshold: opts.threshold,
        max_rel_error,
    })
}

fn eval<T: Scalar, P: ScalarProgram>(prog: &P, params: &ParamStore<T>) -> Result<T> {
    let mut g = Eager;
    let y = prog.run(&mut g, params)?;
    scalar_value(&g, &y).ok_or_else(|| Error::Oracle("program produced no value".into()))
}
