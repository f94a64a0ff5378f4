use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::{BatchNormStats, Conv2dGeometry};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::params::{Init, Role, Run};

pub const BN_EPS: f64 = 1e-5;

/// Square-kernel convolution with `k/2` padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub groups: usize,
    pub bias: bool,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        init: &mut Init<T>,
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        groups: usize,
        bias: bool,
    ) -> Result<Self> {
        let name = name.into();
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::Config(format!(
                "{name}: {c_in} -> {c_out} channels not divisible into {groups} groups"
            )));
        }
        if k % 2 == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "{name}: kernel must be odd and stride positive, got k={k}, s={stride}"
            )));
        }
        let fan_in = c_in / groups * k * k;
        init.weight(format!("{name}.weight"), vec![c_out, c_in / groups, k, k], fan_in)?;
        if bias {
            init.tensor(format!("{name}.bias"), Role::Bias, Tensor::zeros(vec![c_out])?)?;
        }
        Ok(Conv {
            name,
            c_in,
            c_out,
            k,
            stride,
            groups,
            bias,
        })
    }

    pub fn geometry(&self) -> Conv2dGeometry {
        Conv2dGeometry::strided(self.k, self.stride).with_groups(self.groups)
    }

    pub fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let w = r.p(&format!("{}.weight", self.name))?;
        let b = if self.bias {
            Some(r.p(&format!("{}.bias", self.name))?)
        } else {
            None
        };
        r.g.conv2d(x, &w, b.as_ref(), self.geometry())
    }
}

/// Inference-mode batch norm. Defaults: γ=1, β=0, μ=0, σ²=1.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new<T: Scalar>(init: &mut Init<T>, name: impl Into<String>, channels: usize) -> Result<Self> {
        let name = name.into();
        init.tensor(format!("{name}.gamma"), Role::BnGamma, Tensor::ones(vec![channels])?)?;
        init.tensor(format!("{name}.beta"), Role::BnBeta, Tensor::zeros(vec![channels])?)?;
        init.tensor(format!("{name}.running_mean"), Role::BnMean, Tensor::zeros(vec![channels])?)?;
        init.tensor(format!("{name}.running_var"), Role::BnVar, Tensor::ones(vec![channels])?)?;
        Ok(BatchNorm {
            name,
            channels,
            eps: BN_EPS,
        })
    }

    pub fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let gamma = r.p(&format!("{}.gamma", self.name))?;
        let beta = r.p(&format!("{}.beta", self.name))?;
        let stats = BatchNormStats {
            mean: r.raw(&format!("{}.running_mean", self.name))?.clone(),
            var: r.raw(&format!("{}.running_var", self.name))?.clone(),
            eps: self.eps,
        };
        if stats.var.data().iter().any(|v| *v < T::zero()) {
            return Err(Error::Config(format!("{}: running_var must be >= 0", self.name)));
        }
        r.g.batchnorm(x, &gamma, &beta, &stats)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Act {
    Identity,
    Relu6,
}

impl Act {
    pub fn apply<T: Scalar, G: Graph<T>>(self, g: &mut G, x: &G::Var) -> Result<G::Var> {
        match self {
            Act::Identity => Ok(x.clone()),
            Act::Relu6 => g.relu6(x),
        }
    }
}

/// Bias-free convolution, batch norm, optional activation.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub act: Act,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        init: &mut Init<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        groups: usize,
        act: Act,
    ) -> Result<Self> {
        Ok(ConvBn {
            conv: Conv::new(init, format!("{name}.conv"), c_in, c_out, k, stride, groups, false)?,
            bn: BatchNorm::new(init, format!("{name}.bn"), c_out)?,
            act,
        })
    }

    pub fn pointwise<T: Scalar>(init: &mut Init<T>, name: &str, c_in: usize, c_out: usize, act: Act) -> Result<Self> {
        Self::new(init, name, c_in, c_out, 1, 1, 1, act)
    }

    pub fn depthwise<T: Scalar>(init: &mut Init<T>, name: &str, c: usize, k: usize, stride: usize, act: Act) -> Result<Self> {
        Self::new(init, name, c, c, k, stride, c, act)
    }

    pub fn name(&self) -> &str {
        self.conv.name.strip_suffix(".conv").unwrap_or(&self.conv.name)
    }

    pub fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let y = self.conv.forward(r, x)?;
        let y = self.bn.forward(r, &y)?;
        self.act.apply(r.g, &y)
    }
}

/// One `[MB, k, e, c_out, s]` entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobileNetBlockSpec {
    pub kernel: usize,
    pub expansion: f64,
    pub out_channels: usize,
    pub stride: usize,
}

/// Inverted residual: pointwise expand (omitted at expansion 1), depth-wise
/// `k×k` with the block stride, linear pointwise projection.
#[derive(Clone, Debug)]
pub struct MobileNetBlock {
    pub spec: MobileNetBlockSpec,
    pub in_channels: usize,
    pub hidden: usize,
    pub expand: Option<ConvBn>,
    pub dw: ConvBn,
    pub project: ConvBn,
}

impl MobileNetBlock {
    pub fn new<T: Scalar>(init: &mut Init<T>, name: &str, in_channels: usize, spec: MobileNetBlockSpec) -> Result<Self> {
        if spec.expansion < 1.0 || !matches!(spec.stride, 1 | 2) {
            return Err(Error::Config(format!(
                "{name}: expansion must be >= 1 and stride 1 or 2, got {spec:?}"
            )));
        }
        let hidden = (in_channels as f64 * spec.expansion).round() as usize;
        let expand = if hidden != in_channels {
            Some(ConvBn::pointwise(init, &format!("{name}.expand"), in_channels, hidden, Act::Relu6)?)
        } else {
            None
        };
        let dw = ConvBn::depthwise(init, &format!("{name}.dw"), hidden, spec.kernel, spec.stride, Act::Relu6)?;
        let project = ConvBn::pointwise(init, &format!("{name}.project"), hidden, spec.out_channels, Act::Identity)?;
        Ok(MobileNetBlock {
            spec,
            in_channels,
            hidden,
            expand,
            dw,
            project,
        })
    }

    pub fn residual(&self) -> bool {
        self.spec.stride == 1 && self.in_channels == self.spec.out_channels
    }

    pub fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let c = r.g.shape(x)[0];
        if c != self.in_channels {
            return Err(Error::Config(format!(
                "{}: expects {} input channels, got {c}",
                self.dw.name(),
                self.in_channels
            )));
        }
        let h = match &self.expand {
            Some(e) => e.forward(r, x)?,
            None => x.clone(),
        };
        let h = self.dw.forward(r, &h)?;
        let y = self.project.forward(r, &h)?;
        if self.residual() {
            r.g.add(x, &y)
        } else {
            Ok(y)
        }
    }
}

/// Global average pool of `[C, H, W]` to `[C, 1, 1]`.
pub fn global_avg_pool<T: Scalar, G: Graph<T>>(g: &mut G, x: &G::Var) -> Result<G::Var> {
    let s = g.shape(x);
    let y = g.sum_axis(x, 2)?;
    let y = g.sum_axis(&y, 1)?;
    g.scale(&y, 1.0 / (s[1] * s[2]) as f64)
}
