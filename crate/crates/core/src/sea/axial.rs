//! Squeeze, attend and expand along one spatial axis.
//!
//! Squeezed features keep the reduced axis with length 1, so a horizontal
//! squeeze of `[C, H, W]` is `[C, H, 1]` and a vertical one is `[C, 1, W]`.
//! [`to_sequence`] flattens either to the `[C, n]` sequence that
//! [`axial_attend`] consumes.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::linear_interp_weights;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::SqueezeMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// One token per row: reduce over W, sequence length H.
    Horizontal,
    /// One token per column: reduce over H, sequence length W.
    Vertical,
}

impl Axis {
    pub fn reduced_dim(self) -> usize {
        match self {
            Axis::Horizontal => 2,
            Axis::Vertical => 1,
        }
    }

    pub fn kept_dim(self) -> usize {
        3 - self.reduced_dim()
    }
}

fn spatial<T: Scalar, G: Graph<T>>(g: &G, x: &G::Var, op: &'static str) -> Result<[usize; 3]> {
    match g.shape(x)[..] {
        [c, h, w] => Ok([c, h, w]),
        ref s => Err(Error::dim(op, format!("expected [C, H, W], got {s:?}"))),
    }
}

/// Softmax of mask logits `[1, H, W]` along the axis being squeezed.
pub fn normalize_mask<T: Scalar, G: Graph<T>>(g: &mut G, logits: &G::Var, axis: Axis) -> Result<G::Var> {
    g.softmax(logits, axis.reduced_dim())
}

/// Reduces `x: [C, H, W]` along one axis. `mask` is a normalized
/// `[1, H, W]` weight map and is required in adaptive mode only.
pub fn squeeze_axis<T: Scalar, G: Graph<T>>(
    g: &mut G,
    x: &G::Var,
    axis: Axis,
    mode: SqueezeMode,
    mask: Option<&G::Var>,
) -> Result<G::Var> {
    let s = spatial(g, x, "squeeze_axis")?;
    let d = axis.reduced_dim();
    match mode {
        SqueezeMode::MeanPool => {
            let y = g.sum_axis(x, d)?;
            g.scale(&y, 1.0 / s[d] as f64)
        }
        SqueezeMode::MaxPool => g.max_axis(x, d),
        SqueezeMode::Adaptive => {
            let m = mask.ok_or_else(|| Error::Config("adaptive squeeze needs a mask".into()))?;
            let ms = g.shape(m);
            if ms != [1, s[1], s[2]] {
                return Err(Error::dim(
                    "squeeze_axis",
                    format!("mask {ms:?} does not cover input {s:?}"),
                ));
            }
            let y = g.mul(x, m)?;
            g.sum_axis(&y, d)
        }
    }
}

/// `[C, H, 1]` or `[C, 1, W]` to `[C, n]`.
pub fn to_sequence<T: Scalar, G: Graph<T>>(g: &mut G, squeezed: &G::Var, axis: Axis) -> Result<G::Var> {
    let s = g.shape(squeezed);
    g.reshape(squeezed, &[s[0], s[axis.kept_dim()]])
}

/// `[C, n]` back to the keep-dim layout of `axis`.
pub fn from_sequence<T: Scalar, G: Graph<T>>(g: &mut G, seq: &G::Var, axis: Axis) -> Result<G::Var> {
    let s = g.shape(seq);
    match axis {
        Axis::Horizontal => g.reshape(seq, &[s[0], s[1], 1]),
        Axis::Vertical => g.reshape(seq, &[s[0], 1, s[1]]),
    }
}

/// Row-stochastic `[n, len]` matrix that linearly resamples a length-`len`
/// table to `n` positions. Identity when `n == len`.
pub fn interp_matrix<T: Scalar>(len: usize, n: usize) -> Tensor<T> {
    let taps = linear_interp_weights(len, n);
    let mut m = vec![T::zero(); n * len];
    for (i, tap) in taps.iter().enumerate() {
        m[i * len + tap.lo] += T::cast(1.0 - tap.t);
        if tap.t != 0.0 {
            m[i * len + tap.hi] += T::cast(tap.t);
        }
    }
    Tensor::new(vec![n, len], m).expect("interp matrix shape")
}

/// Resamples a `[L, C]` table to length `n` and returns it as `[C, n]`.
pub fn position_embedding<T: Scalar, G: Graph<T>>(g: &mut G, table: &G::Var, n: usize) -> Result<G::Var> {
    let s = g.shape(table);
    let [len, _] = s[..] else {
        return Err(Error::dim("position_embedding", format!("table must be [L, C], got {s:?}")));
    };
    let m = g.constant(interp_matrix(len, n));
    let r = g.matmul(&m, table)?;
    g.permute(&r, &[1, 0])
}

/// `softmax(q kᵀ / √d)` per head for batched `q: [B, n, d]`, `k: [B, d, m]`.
pub fn scaled_softmax<T: Scalar, G: Graph<T>>(g: &mut G, q: &G::Var, k: &G::Var) -> Result<G::Var> {
    let d = g.shape(q)[2];
    let logits = g.matmul(q, k)?;
    let logits = g.scale(&logits, 1.0 / (d as f64).sqrt())?;
    g.softmax(&logits, 2)
}

fn check_seq<T: Scalar, G: Graph<T>>(g: &G, q: &G::Var, k: &G::Var, v: &G::Var, heads: usize) -> Result<[usize; 3]> {
    let (qs, ks, vs) = (g.shape(q), g.shape(k), g.shape(v));
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return Err(Error::dim(
            "axial_attend",
            format!("sequences must be [C, n], got {qs:?}, {ks:?}, {vs:?}"),
        ));
    }
    if qs[1] != ks[1] || qs[1] != vs[1] {
        return Err(Error::dim(
            "axial_attend",
            format!("sequence lengths differ: q {}, k {}, v {}", qs[1], ks[1], vs[1]),
        ));
    }
    if qs[0] != ks[0] {
        return Err(Error::dim(
            "axial_attend",
            format!("q has {} channels, k has {}", qs[0], ks[0]),
        ));
    }
    if heads == 0 || qs[0] % heads != 0 || vs[0] % heads != 0 {
        return Err(Error::Config(format!(
            "{} key and {} value channels do not split into {heads} heads",
            qs[0], vs[0]
        )));
    }
    Ok([qs[0], vs[0], qs[1]])
}

/// Per-head attention weights `[heads, n, n]` over a squeezed sequence.
pub fn axial_weights<T: Scalar, G: Graph<T>>(
    g: &mut G,
    q: &G::Var,
    k: &G::Var,
    heads: usize,
    pos: Option<(&G::Var, &G::Var)>,
) -> Result<G::Var> {
    let (qs, ks) = (g.shape(q), g.shape(k));
    if qs != ks || qs.len() != 2 {
        return Err(Error::dim("axial_attend", format!("q {qs:?} and k {ks:?} differ")));
    }
    let (c, n) = (qs[0], qs[1]);
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!("{c} key channels do not split into {heads} heads")));
    }
    let (q, k) = match pos {
        Some((rq, rk)) => (g.add(q, rq)?, g.add(k, rk)?),
        None => (q.clone(), k.clone()),
    };
    let d = c / heads;
    let qh = g.reshape(&q, &[heads, d, n])?;
    let qh = g.permute(&qh, &[0, 2, 1])?;
    let kh = g.reshape(&k, &[heads, d, n])?;
    scaled_softmax(g, &qh, &kh)
}

/// Multi-head attention over `[C, n]` sequences; returns `[C_v, n]`.
/// `pos` holds the `(r_q, r_k)` embeddings, each `[C_qk, n]`.
pub fn axial_attend<T: Scalar, G: Graph<T>>(
    g: &mut G,
    q: &G::Var,
    k: &G::Var,
    v: &G::Var,
    heads: usize,
    pos: Option<(&G::Var, &G::Var)>,
) -> Result<G::Var> {
    let [_, cv, n] = check_seq(g, q, k, v, heads)?;
    let attn = axial_weights(g, q, k, heads, pos)?;
    let dv = cv / heads;
    let vh = g.reshape(v, &[heads, dv, n])?;
    let vh = g.permute(&vh, &[0, 2, 1])?;
    let out = g.matmul(&attn, &vh)?;
    let out = g.permute(&out, &[0, 2, 1])?;
    g.reshape(&out, &[cv, n])
}

/// Spreads one squeezed axis over `(h, w)`. Without a mask every token is
/// copied across its row or column; with a `[1, H, W]` restoration mask
/// each copy is scaled by its position's weight.
pub fn expand_axis<T: Scalar, G: Graph<T>>(
    g: &mut G,
    y: &G::Var,
    axis: Axis,
    target: (usize, usize),
    mask: Option<&G::Var>,
) -> Result<G::Var> {
    let s = g.shape(y);
    let (h, w) = target;
    let want = match axis {
        Axis::Horizontal => [h, 1],
        Axis::Vertical => [1, w],
    };
    if s.len() != 3 || s[1..] != want {
        return Err(Error::dim(
            "expand_axis",
            format!("axial feature {s:?} does not match target {h}x{w}"),
        ));
    }
    let m = match mask {
        Some(m) => m.clone(),
        None => g.constant(Tensor::ones(vec![1, h, w])?),
    };
    let ms = g.shape(&m);
    if ms != [1, h, w] {
        return Err(Error::dim("expand_axis", format!("mask {ms:?}, target {h}x{w}")));
    }
    g.mul(y, &m)
}

/// Sum of both expanded axes. Plain broadcasting needs no mask tensors.
pub fn expand_sum<T: Scalar, G: Graph<T>>(
    g: &mut G,
    y_h: &G::Var,
    y_v: &G::Var,
    masks: Option<(&G::Var, &G::Var)>,
) -> Result<G::Var> {
    match masks {
        None => g.add(y_h, y_v),
        Some((mh, mv)) => {
            let a = g.mul(y_h, mh)?;
            let b = g.mul(y_v, mv)?;
            g.add(&a, &b)
        }
    }
}
