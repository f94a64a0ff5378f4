use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::{Act, BatchNorm, Conv, ConvBn, Init, Run};
use crate::scalar::Scalar;

use super::axial::{self, Axis};
use super::config::{AttentionConfig, EnhanceInput, EnhanceMode, SqueezeMode};

/// Bound of the uniform initializer for position tables.
const POS_INIT: f64 = 0.1;

/// Convolutional kernel producing per-position weights in (0, 1).
#[derive(Clone, Debug)]
pub struct DetailEnhancement {
    pub input: EnhanceInput,
    /// Separate projection of `x` for `conv_x` / `upconv_x`.
    pub source: Option<ConvBn>,
    pub dw: ConvBn,
    pub pw: Conv,
    pub bn: BatchNorm,
}

impl DetailEnhancement {
    pub fn new<T: Scalar>(init: &mut Init<T>, name: &str, cfg: &AttentionConfig) -> Result<Self> {
        let ch = cfg.enhance_channels();
        let source = match cfg.enhance_input {
            EnhanceInput::ConcatQkv => None,
            EnhanceInput::ConvX | EnhanceInput::UpconvX => Some(ConvBn::pointwise(
                init,
                &format!("{name}.source"),
                cfg.channels,
                ch,
                Act::Identity,
            )?),
        };
        Ok(DetailEnhancement {
            input: cfg.enhance_input,
            source,
            dw: ConvBn::depthwise(init, &format!("{name}.dw"), ch, 3, 1, Act::Identity)?,
            pw: Conv::new(init, format!("{name}.pw"), ch, cfg.channels, 1, 1, 1, false)?,
            bn: BatchNorm::new(init, format!("{name}.bn"), cfg.channels)?,
        })
    }

    pub fn forward<T: Scalar, G: Graph<T>>(
        &self,
        r: &mut Run<'_, T, G>,
        x: &G::Var,
        qkv: (&G::Var, &G::Var, &G::Var),
    ) -> Result<G::Var> {
        let src = match &self.source {
            Some(s) => s.forward(r, x)?,
            None => r.g.concat(&[qkv.0.clone(), qkv.1.clone(), qkv.2.clone()], 0)?,
        };
        let y = self.dw.forward(r, &src)?;
        let y = self.pw.forward(r, &y)?;
        let y = r.g.relu6(&y)?;
        let y = self.bn.forward(r, &y)?;
        r.g.sigmoid(&y)
    }
}

/// Squeeze-enhanced axial attention on one `[C, H, W]` feature map.
#[derive(Clone, Debug)]
pub struct SeaAttention {
    pub name: String,
    pub cfg: AttentionConfig,
    /// Adds interpolated position tables to the squeezed q and k.
    pub positional: bool,
    pub q: ConvBn,
    pub k: ConvBn,
    pub v: ConvBn,
    /// Squeeze mask heads `(A_W, A_H)`, adaptive mode only.
    pub squeeze_masks: Option<(ConvBn, ConvBn)>,
    /// Restoration mask heads, adaptive mode only.
    pub expand_masks: Option<(ConvBn, ConvBn)>,
    pub proj: ConvBn,
    pub enhance: Option<DetailEnhancement>,
}

/// Names of the four position tables, in `(q_h, k_h, q_v, k_v)` order.
pub fn pos_table_names(block: &str) -> [String; 4] {
    ["q_h", "k_h", "q_v", "k_v"].map(|s| format!("{block}.pos.{s}"))
}

impl SeaAttention {
    pub fn new<T: Scalar>(init: &mut Init<T>, name: &str, cfg: AttentionConfig, positional: bool) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let pw = |init: &mut Init<T>, part: &str, cout: usize| {
            ConvBn::pointwise(init, &format!("{name}.{part}"), c, cout, Act::Identity)
        };
        let q = pw(init, "q", cfg.key_dim)?;
        let k = pw(init, "k", cfg.key_dim)?;
        let v = pw(init, "v", cfg.value_dim)?;
        let adaptive = cfg.squeeze_mode == SqueezeMode::Adaptive;
        let squeeze_masks = if adaptive {
            Some((pw(init, "squeeze_h", 1)?, pw(init, "squeeze_v", 1)?))
        } else {
            None
        };
        let expand_masks = if adaptive {
            Some((pw(init, "expand_h", 1)?, pw(init, "expand_v", 1)?))
        } else {
            None
        };
        if positional {
            for t in pos_table_names(name) {
                init.table(t, vec![cfg.pos_embed_len, cfg.key_dim], POS_INIT)?;
            }
        }
        let proj = ConvBn::pointwise(init, &format!("{name}.proj"), cfg.value_dim, c, Act::Identity)?;
        let enhance = match cfg.enhance_mode {
            EnhanceMode::Off => None,
            _ => Some(DetailEnhancement::new(init, &format!("{name}.enhance"), &cfg)?),
        };
        Ok(SeaAttention {
            name: name.to_string(),
            cfg,
            positional,
            q,
            k,
            v,
            squeeze_masks,
            expand_masks,
            proj,
            enhance,
        })
    }

    fn check_input<T: Scalar, G: Graph<T>>(&self, g: &G, x: &G::Var) -> Result<(usize, usize)> {
        match g.shape(x)[..] {
            [c, h, w] if c == self.cfg.channels => Ok((h, w)),
            ref s => Err(Error::dim(
                "sea_attention",
                format!("{}: expected [{}, H, W], got {s:?}", self.name, self.cfg.channels),
            )),
        }
    }

    pub fn project_qkv<T: Scalar, G: Graph<T>>(
        &self,
        r: &mut Run<'_, T, G>,
        x: &G::Var,
    ) -> Result<(G::Var, G::Var, G::Var)> {
        self.check_input(r.g, x)?;
        Ok((self.q.forward(r, x)?, self.k.forward(r, x)?, self.v.forward(r, x)?))
    }

    pub fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let (q, k, v) = self.project_qkv(r, x)?;
        self.forward_qkv(r, x, (&q, &k, &v))
    }

    /// Everything downstream of the q, k, v projections.
    pub fn forward_qkv<T: Scalar, G: Graph<T>>(
        &self,
        r: &mut Run<'_, T, G>,
        x: &G::Var,
        qkv: (&G::Var, &G::Var, &G::Var),
    ) -> Result<G::Var> {
        let s = self.semantic(r, x, qkv)?;
        let s = self.proj.forward(r, &s)?;
        match (&self.enhance, self.cfg.enhance_mode) {
            (Some(e), EnhanceMode::Mul) => {
                let w = e.forward(r, x, qkv)?;
                r.g.mul(&s, &w)
            }
            (Some(e), EnhanceMode::Add) => {
                let w = e.forward(r, x, qkv)?;
                r.g.add(&s, &w)
            }
            _ => Ok(s),
        }
    }

    /// Normalized squeeze masks `[1, H, W]`, adaptive mode only.
    pub fn squeeze_weights<T: Scalar, G: Graph<T>>(
        &self,
        r: &mut Run<'_, T, G>,
        x: &G::Var,
    ) -> Result<Option<(G::Var, G::Var)>> {
        let Some((mh, mv)) = &self.squeeze_masks else {
            return Ok(None);
        };
        let lh = mh.forward(r, x)?;
        let lv = mv.forward(r, x)?;
        Ok(Some((
            axial::normalize_mask(r.g, &lh, Axis::Horizontal)?,
            axial::normalize_mask(r.g, &lv, Axis::Vertical)?,
        )))
    }

    fn positions<T: Scalar, G: Graph<T>>(
        &self,
        r: &mut Run<'_, T, G>,
        axis: Axis,
        n: usize,
    ) -> Result<Option<(G::Var, G::Var)>> {
        if !self.positional {
            return Ok(None);
        }
        let names = pos_table_names(&self.name);
        let (qn, kn) = match axis {
            Axis::Horizontal => (&names[0], &names[1]),
            Axis::Vertical => (&names[2], &names[3]),
        };
        let bq = r.p(qn)?;
        let bk = r.p(kn)?;
        Ok(Some((
            axial::position_embedding(r.g, &bq, n)?,
            axial::position_embedding(r.g, &bk, n)?,
        )))
    }

    /// Attention weights `[heads, n, n]` of one axis, for inspection.
    pub fn axis_weights<T: Scalar, G: Graph<T>>(
        &self,
        r: &mut Run<'_, T, G>,
        x: &G::Var,
        axis: Axis,
    ) -> Result<G::Var> {
        let (h, w) = self.check_input(r.g, x)?;
        let (q, k, _) = self.project_qkv(r, x)?;
        let masks = self.squeeze_weights(r, x)?;
        let m = masks.as_ref().map(|(a, b)| if axis == Axis::Horizontal { a } else { b });
        let mode = self.cfg.squeeze_mode;
        let qs = axial::squeeze_axis(r.g, &q, axis, mode, m)?;
        let ks = axial::squeeze_axis(r.g, &k, axis, mode, m)?;
        let qs = axial::to_sequence(r.g, &qs, axis)?;
        let ks = axial::to_sequence(r.g, &ks, axis)?;
        let n = if axis == Axis::Horizontal { h } else { w };
        let pos = self.positions(r, axis, n)?;
        axial::axial_weights(r.g, &qs, &ks, self.cfg.heads, pos.as_ref().map(|(a, b)| (a, b)))
    }

    /// Squeeze, attend and expand on both axes; `[C_v, H, W]` before the
    /// output projection.
    pub fn semantic<T: Scalar, G: Graph<T>>(
        &self,
        r: &mut Run<'_, T, G>,
        x: &G::Var,
        qkv: (&G::Var, &G::Var, &G::Var),
    ) -> Result<G::Var> {
        let (h, w) = self.check_input(r.g, x)?;
        let masks = self.squeeze_weights(r, x)?;
        let mode = self.cfg.squeeze_mode;
        let mut outs = Vec::with_capacity(2);
        for (axis, n) in [(Axis::Horizontal, h), (Axis::Vertical, w)] {
            let m = masks.as_ref().map(|(a, b)| if axis == Axis::Horizontal { a } else { b });
            let mut seqs = Vec::with_capacity(3);
            for t in [qkv.0, qkv.1, qkv.2] {
                let s = axial::squeeze_axis(r.g, t, axis, mode, m)?;
                seqs.push(axial::to_sequence(r.g, &s, axis)?);
            }
            let pos = self.positions(r, axis, n)?;
            let y = axial::axial_attend(
                r.g,
                &seqs[0],
                &seqs[1],
                &seqs[2],
                self.cfg.heads,
                pos.as_ref().map(|(a, b)| (a, b)),
            )?;
            outs.push(axial::from_sequence(r.g, &y, axis)?);
        }
        let restore = match &self.expand_masks {
            Some((eh, ev)) => Some((eh.forward(r, x)?, ev.forward(r, x)?)),
            None => None,
        };
        axial::expand_sum(r.g, &outs[0], &outs[1], restore.as_ref().map(|(a, b)| (a, b)))
    }
}
