use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::{Act, ConvBn, Init, MobileNetBlock, MobileNetBlockSpec, Run};
use crate::scalar::Scalar;

pub const MAIN_EXPANSION: f64 = 4.0;
pub const MAIN_KERNEL: usize = 5;

/// How a student feature is brought to twice its resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleKind {
    /// Plain bilinear resize; the gate feature is only shape-checked.
    Bilinear,
    /// Gated, with inverted-residual main and refine paths.
    #[default]
    #[serde(rename = "mobilenet")]
    MobileNet,
    /// Gated, with dense 3×3 conv-BN main and refine paths.
    Conv,
}

impl UpsampleKind {
    pub const ALL: [UpsampleKind; 3] = [UpsampleKind::Bilinear, UpsampleKind::MobileNet, UpsampleKind::Conv];

    fn as_str(self) -> &'static str {
        match self {
            UpsampleKind::Bilinear => "bilinear",
            UpsampleKind::MobileNet => "mobilenet",
            UpsampleKind::Conv => "conv",
        }
    }
}

impl fmt::Display for UpsampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpsampleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UpsampleKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Argument(format!("unknown upsample kind `{s}` (bilinear, mobilenet, conv)")))
    }
}

#[derive(Clone, Debug)]
enum Path {
    Mb(MobileNetBlock),
    Conv(ConvBn),
}

impl Path {
    fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        match self {
            Path::Mb(b) => b.forward(r, x),
            Path::Conv(c) => c.forward(r, x),
        }
    }
}

#[derive(Clone, Debug)]
struct Gated {
    gate: ConvBn,
    main: Path,
    refine: Path,
}

/// `refine(sigmoid(BN(conv(gate))) ⊙ up2(main(low)))`, where `gate` is the
/// higher-resolution feature of the previous stage.
#[derive(Clone, Debug)]
pub struct UpsampleModule {
    pub kind: UpsampleKind,
    pub channels: usize,
    pub gate_channels: usize,
    gated: Option<Gated>,
}

impl UpsampleModule {
    pub fn new<T: Scalar>(
        init: &mut Init<T>,
        name: &str,
        channels: usize,
        gate_channels: usize,
        kind: UpsampleKind,
    ) -> Result<Self> {
        let mb = |init: &mut Init<T>, part: &str| -> Result<Path> {
            let spec = MobileNetBlockSpec {
                kernel: MAIN_KERNEL,
                expansion: MAIN_EXPANSION,
                out_channels: channels,
                stride: 1,
            };
            Ok(Path::Mb(MobileNetBlock::new(init, &format!("{name}.{part}"), channels, spec)?))
        };
        let gated = match kind {
            UpsampleKind::Bilinear => None,
            UpsampleKind::MobileNet => Some(Gated {
                gate: ConvBn::pointwise(init, &format!("{name}.gate"), gate_channels, channels, Act::Identity)?,
                main: mb(init, "main")?,
                refine: mb(init, "refine")?,
            }),
            UpsampleKind::Conv => Some(Gated {
                gate: ConvBn::pointwise(init, &format!("{name}.gate"), gate_channels, channels, Act::Identity)?,
                main: Path::Conv(ConvBn::new(init, &format!("{name}.main"), channels, channels, 3, 1, 1, Act::Relu6)?),
                refine: Path::Conv(ConvBn::new(
                    init,
                    &format!("{name}.refine"),
                    channels,
                    channels,
                    3,
                    1,
                    1,
                    Act::Identity,
                )?),
            }),
        };
        Ok(UpsampleModule {
            kind,
            channels,
            gate_channels,
            gated,
        })
    }

    pub fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, low: &G::Var, gate: &G::Var) -> Result<G::Var> {
        let (ls, gs) = (r.g.shape(low), r.g.shape(gate));
        let ok = matches!((&ls[..], &gs[..]), (&[c, h, w], &[cg, gh, gw])
            if c == self.channels && cg == self.gate_channels && gh == 2 * h && gw == 2 * w);
        if !ok {
            return Err(Error::Config(format!(
                "upsample: low {ls:?} and gate {gs:?} do not fit a {}-channel module gated by {} channels at 2x",
                self.channels, self.gate_channels
            )));
        }
        let (h, w) = (gs[1], gs[2]);
        let Some(p) = &self.gated else {
            return r.g.bilinear_resize(low, h, w);
        };
        let weights = p.gate.forward(r, gate)?;
        let weights = r.g.sigmoid(&weights)?;
        let main = p.main.forward(r, low)?;
        let main = r.g.bilinear_resize(&main, h, w)?;
        let y = r.g.mul(&weights, &main)?;
        p.refine.forward(r, &y)
    }
}
