//! Reference attentions used for cost comparisons: dense global, windowed
//! and row-plus-column axial. All use `C_qk = C/2`, `C_v = C`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::{Act, ConvBn, Init, Run};
use crate::scalar::Scalar;

use super::axial::scaled_softmax;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "window")]
pub enum BaselineKind {
    Global,
    /// Non-overlapping `m×m` tiles.
    Window(usize),
    Axial,
}

/// Dense attention of `[B, n, d]` queries against `[B, d, n]` keys and
/// `[B, n, dv]` values.
fn dense<T: Scalar, G: Graph<T>>(g: &mut G, q: &G::Var, k: &G::Var, v: &G::Var) -> Result<G::Var> {
    let a = scaled_softmax(g, q, k)?;
    g.matmul(&a, v)
}

/// Views `[C, H, W]` as `[heads, d, H', a, W', b]`, permutes by `order`
/// and flattens to `[batch, n, d]` (or `[batch, d, n]` for keys).
fn to_batches<T: Scalar, G: Graph<T>>(
    g: &mut G,
    x: &G::Var,
    heads: usize,
    view: [usize; 4],
    order: [usize; 6],
    keys: bool,
) -> Result<G::Var> {
    let c = g.shape(x)[0];
    let d = c / heads;
    let v6 = g.reshape(x, &[heads, d, view[0], view[1], view[2], view[3]])?;
    let p = g.permute(&v6, &order)?;
    let s = g.shape(&p);
    let batch = s[0] * s[1] * s[2];
    let n = s[3] * s[4];
    let flat = g.reshape(&p, &[batch, n, d])?;
    if keys {
        g.permute(&flat, &[0, 2, 1])
    } else {
        Ok(flat)
    }
}

fn from_batches<T: Scalar, G: Graph<T>>(
    g: &mut G,
    y: &G::Var,
    heads: usize,
    view: [usize; 4],
    order: [usize; 6],
) -> Result<G::Var> {
    let dv = g.shape(y)[2];
    let mut src = [0usize; 6];
    let full = [heads, dv, view[0], view[1], view[2], view[3]];
    for (i, &o) in order.iter().enumerate() {
        src[i] = full[o];
    }
    let y6 = g.reshape(y, &src)?;
    let mut inv = [0usize; 6];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    let back = g.permute(&y6, &inv)?;
    g.reshape(&back, &[heads * dv, view[0] * view[1], view[2] * view[3]])
}

/// Attention of `q, k: [C_qk, H, W]`, `v: [C_v, H, W]` grouped by the given
/// view and permutation; the last two non-channel dims of `order` form the
/// sequence.
fn grouped<T: Scalar, G: Graph<T>>(
    g: &mut G,
    qkv: (&G::Var, &G::Var, &G::Var),
    heads: usize,
    view: [usize; 4],
    order: [usize; 6],
) -> Result<G::Var> {
    let q = to_batches(g, qkv.0, heads, view, order, false)?;
    let k = to_batches(g, qkv.1, heads, view, order, true)?;
    let v = to_batches(g, qkv.2, heads, view, order, false)?;
    let y = dense(g, &q, &k, &v)?;
    from_batches(g, &y, heads, view, order)
}

/// Runs the chosen baseline on projected `q, k, v`; returns `[C_v, H, W]`.
pub fn baseline_attend<T: Scalar, G: Graph<T>>(
    g: &mut G,
    qkv: (&G::Var, &G::Var, &G::Var),
    heads: usize,
    kind: BaselineKind,
) -> Result<G::Var> {
    let s = g.shape(qkv.0);
    let [_, h, w] = s[..] else {
        return Err(Error::dim("baseline_attention", format!("expected [C, H, W], got {s:?}")));
    };
    // View dims are (H', a, W', b); the permutation keeps heads first, then
    // the batch dims, then the two sequence dims, then the channel dim 1.
    match kind {
        BaselineKind::Global => grouped(g, qkv, heads, [1, h, 1, w], [0, 2, 4, 3, 5, 1]),
        BaselineKind::Window(m) => {
            if m == 0 || h % m != 0 || w % m != 0 {
                return Err(Error::Config(format!("window {m} does not tile {h}x{w}")));
            }
            grouped(g, qkv, heads, [h / m, m, w / m, m], [0, 2, 4, 3, 5, 1])
        }
        BaselineKind::Axial => {
            // Rows: batch over H, sequence over W.
            let rows = grouped(g, qkv, heads, [h, 1, 1, w], [0, 2, 4, 3, 5, 1])?;
            // Columns: batch over W, sequence over H.
            let cols = grouped(g, qkv, heads, [1, h, w, 1], [0, 2, 4, 3, 5, 1])?;
            g.add(&rows, &cols)
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaselineAttention {
    pub name: String,
    pub kind: BaselineKind,
    pub channels: usize,
    pub heads: usize,
    pub q: ConvBn,
    pub k: ConvBn,
    pub v: ConvBn,
    pub proj: ConvBn,
}

impl BaselineAttention {
    pub fn new<T: Scalar>(
        init: &mut Init<T>,
        name: &str,
        kind: BaselineKind,
        channels: usize,
        heads: usize,
    ) -> Result<Self> {
        let key = channels / 2;
        if heads == 0 || channels % 2 != 0 || key % heads != 0 {
            return Err(Error::Config(format!(
                "{channels} channels do not give C/2 keys split into {heads} heads"
            )));
        }
        let pw = |init: &mut Init<T>, part: &str, cin: usize, cout: usize| {
            ConvBn::pointwise(init, &format!("{name}.{part}"), cin, cout, Act::Identity)
        };
        Ok(BaselineAttention {
            name: name.to_string(),
            kind,
            channels,
            heads,
            q: pw(init, "q", channels, key)?,
            k: pw(init, "k", channels, key)?,
            v: pw(init, "v", channels, channels)?,
            proj: pw(init, "proj", channels, channels)?,
        })
    }

    pub fn project_qkv<T: Scalar, G: Graph<T>>(
        &self,
        r: &mut Run<'_, T, G>,
        x: &G::Var,
    ) -> Result<(G::Var, G::Var, G::Var)> {
        Ok((self.q.forward(r, x)?, self.k.forward(r, x)?, self.v.forward(r, x)?))
    }

    pub fn forward_qkv<T: Scalar, G: Graph<T>>(
        &self,
        r: &mut Run<'_, T, G>,
        qkv: (&G::Var, &G::Var, &G::Var),
    ) -> Result<G::Var> {
        let y = baseline_attend(r.g, qkv, self.heads, self.kind)?;
        self.proj.forward(r, &y)
    }

    pub fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let (q, k, v) = self.project_qkv(r, x)?;
        self.forward_qkv(r, (&q, &k, &v))
    }
}
