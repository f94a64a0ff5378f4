use crate::error::Result;
use crate::graph::Graph;
use crate::nn::{Act, ConvBn, Init, Run};
use crate::scalar::Scalar;

use super::block::SeaAttention;
use super::config::AttentionConfig;

pub const DEFAULT_FFN_RATIO: usize = 2;

/// Convolutional feed-forward: pointwise expand, depth-wise 3×3 with ReLU6,
/// pointwise project.
#[derive(Clone, Debug)]
pub struct ConvFfn {
    pub expand: ConvBn,
    pub dw: ConvBn,
    pub project: ConvBn,
}

impl ConvFfn {
    pub fn new<T: Scalar>(init: &mut Init<T>, name: &str, channels: usize, ratio: usize) -> Result<Self> {
        let hidden = channels * ratio.max(1);
        Ok(ConvFfn {
            expand: ConvBn::pointwise(init, &format!("{name}.expand"), channels, hidden, Act::Identity)?,
            dw: ConvBn::depthwise(init, &format!("{name}.dw"), hidden, 3, 1, Act::Relu6)?,
            project: ConvBn::pointwise(init, &format!("{name}.project"), hidden, channels, Act::Identity)?,
        })
    }

    pub fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let y = self.expand.forward(r, x)?;
        let y = self.dw.forward(r, &y)?;
        self.project.forward(r, &y)
    }
}

/// `x + attn(x)` followed by `x + ffn(x)`.
#[derive(Clone, Debug)]
pub struct SeaFormerLayer {
    pub attn: SeaAttention,
    pub ffn: ConvFfn,
}

impl SeaFormerLayer {
    pub fn new<T: Scalar>(
        init: &mut Init<T>,
        name: &str,
        cfg: AttentionConfig,
        ffn_ratio: usize,
    ) -> Result<Self> {
        let c = cfg.channels;
        Ok(SeaFormerLayer {
            attn: SeaAttention::new(init, &format!("{name}.attn"), cfg, true)?,
            ffn: ConvFfn::new(init, &format!("{name}.ffn"), c, ffn_ratio)?,
        })
    }

    pub fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let a = self.attn.forward(r, x)?;
        let x = r.g.add(x, &a)?;
        let f = self.ffn.forward(r, &x)?;
        r.g.add(&x, &f)
    }
}
