use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantName {
    T,
    S,
    B,
    L,
}

impl VariantName {
    pub const ALL: [VariantName; 4] = [VariantName::T, VariantName::S, VariantName::B, VariantName::L];
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T" => Ok(VariantName::T),
            "S" => Ok(VariantName::S),
            "B" => Ok(VariantName::B),
            "L" => Ok(VariantName::L),
            _ => Err(Error::Config(format!("unknown variant `{s}`; valid names are T, S, B, L"))),
        }
    }
}

/// One row entry of an architecture table. Serialized as the bare tuple,
/// e.g. `["MB", 3, 4, 16, 2]` or `["Sea", 2, 4]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Value", into = "Value")]
pub enum LayerEntry {
    Conv {
        kernel: usize,
        out_channels: usize,
        stride: usize,
    },
    Mb {
        kernel: usize,
        expansion: f64,
        out_channels: usize,
        stride: usize,
    },
    Sea {
        layers: usize,
        heads: usize,
    },
}

impl LayerEntry {
    pub fn stride(&self) -> usize {
        match *self {
            LayerEntry::Conv { stride, .. } | LayerEntry::Mb { stride, .. } => stride,
            LayerEntry::Sea { .. } => 1,
        }
    }
}

impl From<LayerEntry> for Value {
    fn from(e: LayerEntry) -> Value {
        match e {
            LayerEntry::Conv {
                kernel,
                out_channels,
                stride,
            } => json!(["Conv", kernel, out_channels, stride]),
            LayerEntry::Mb {
                kernel,
                expansion,
                out_channels,
                stride,
            } => {
                let e = if expansion.fract() == 0.0 {
                    json!(expansion as u64)
                } else {
                    json!(expansion)
                };
                json!(["MB", kernel, e, out_channels, stride])
            }
            LayerEntry::Sea { layers, heads } => json!(["Sea", layers, heads]),
        }
    }
}

impl TryFrom<Value> for LayerEntry {
    type Error = String;

    fn try_from(v: Value) -> std::result::Result<Self, String> {
        let items = v.as_array().ok_or_else(|| format!("layer entry must be an array, got {v}"))?;
        let tag = items.first().and_then(Value::as_str).ok_or("layer entry must start with a type tag")?;
        let int = |i: usize| -> std::result::Result<usize, String> {
            items
                .get(i)
                .and_then(Value::as_u64)
                .map(|n| n as usize)
                .ok_or_else(|| format!("{tag} entry field {i} must be a non-negative integer in {v}"))
        };
        let arity = |n: usize| -> std::result::Result<(), String> {
            if items.len() == n {
                Ok(())
            } else {
                Err(format!("{tag} entry needs {} fields, got {v}", n - 1))
            }
        };
        match tag {
            "Conv" => {
                arity(4)?;
                Ok(LayerEntry::Conv {
                    kernel: int(1)?,
                    out_channels: int(2)?,
                    stride: int(3)?,
                })
            }
            "MB" => {
                arity(5)?;
                let expansion = items[2].as_f64().ok_or_else(|| format!("MB expansion must be a number in {v}"))?;
                Ok(LayerEntry::Mb {
                    kernel: int(1)?,
                    expansion,
                    out_channels: int(3)?,
                    stride: int(4)?,
                })
            }
            "Sea" => {
                arity(3)?;
                Ok(LayerEntry::Sea {
                    layers: int(1)?,
                    heads: int(2)?,
                })
            }
            other => Err(format!("unknown layer type `{other}` (expected Conv, MB or Sea)")),
        }
    }
}

/// Six stages of layer entries plus the two fusion widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: VariantName,
    pub stages: Vec<Vec<LayerEntry>>,
    pub fusion_dims: [usize; 2],
}

/// Stages 1-3 form the stem; 4-6 the context branch.
pub const STEM_STAGES: usize = 3;
pub const NUM_STAGES: usize = 6;

/// Default per-head query/key width of attention layers, by context stage.
pub const SEA_KEY_PER_HEAD: [usize; 3] = [16, 16, 24];
/// Default feed-forward expansion of attention layers, by context stage.
pub const SEA_FFN_RATIO: [usize; 3] = [2, 4, 6];

fn conv(k: usize, c: usize, s: usize) -> LayerEntry {
    LayerEntry::Conv {
        kernel: k,
        out_channels: c,
        stride: s,
    }
}

fn mb(k: usize, e: usize, c: usize, s: usize) -> LayerEntry {
    LayerEntry::Mb {
        kernel: k,
        expansion: e as f64,
        out_channels: c,
        stride: s,
    }
}

fn sea(layers: usize, heads: usize) -> LayerEntry {
    LayerEntry::Sea { layers, heads }
}

/// Scales the base fusion widths `(128, 160)`, which belong to stage-5/6
/// channels `(192, 256)`, to other stage widths.
pub fn scaled_fusion_dims(c5: usize, c6: usize) -> [usize; 2] {
    let r = |m: usize, c: usize, base: usize| ((m * c) as f64 / base as f64).round() as usize;
    [r(128, c5, 192), r(160, c6, 256)]
}

impl VariantSpec {
    pub fn preset(name: VariantName) -> Self {
        use VariantName::*;
        let stages = match name {
            T => vec![
                vec![conv(3, 16, 2), mb(3, 1, 16, 1)],
                vec![mb(3, 4, 16, 2), mb(3, 3, 16, 1)],
                vec![mb(5, 3, 32, 2), mb(5, 3, 32, 1)],
                vec![mb(3, 3, 64, 2), mb(3, 3, 64, 1)],
                vec![mb(5, 3, 128, 2), sea(2, 4)],
                vec![mb(3, 6, 160, 2), sea(2, 4)],
            ],
            S => vec![
                vec![conv(3, 16, 2), mb(3, 1, 16, 1)],
                vec![mb(3, 4, 24, 2), mb(3, 3, 24, 1)],
                vec![mb(5, 3, 48, 2), mb(5, 3, 48, 1)],
                vec![mb(3, 3, 96, 2), mb(3, 3, 96, 1)],
                vec![mb(5, 4, 160, 2), sea(3, 6)],
                vec![mb(3, 6, 192, 2), sea(3, 6)],
            ],
            B => vec![
                vec![conv(3, 16, 2), mb(3, 1, 16, 1)],
                vec![mb(3, 4, 32, 2), mb(3, 3, 32, 1)],
                vec![mb(5, 3, 64, 2), mb(5, 3, 64, 1)],
                vec![mb(3, 3, 128, 2), mb(3, 3, 128, 1)],
                vec![mb(5, 4, 192, 2), sea(4, 8)],
                vec![mb(3, 6, 256, 2), sea(4, 8)],
            ],
            L => vec![
                vec![conv(3, 32, 2), mb(3, 3, 32, 1)],
                vec![mb(3, 4, 64, 2), mb(3, 4, 64, 1)],
                vec![mb(5, 4, 128, 2), mb(5, 4, 128, 1)],
                vec![mb(3, 4, 192, 2), mb(3, 4, 192, 1), sea(3, 8)],
                vec![mb(5, 4, 256, 2), sea(3, 8)],
                vec![mb(3, 6, 320, 2), sea(3, 8)],
            ],
        };
        let mut spec = VariantSpec {
            name,
            stages,
            fusion_dims: [0, 0],
        };
        spec.fusion_dims = scaled_fusion_dims(spec.stage_channels(4), spec.stage_channels(5));
        spec
    }

    /// Output channels of stage `i` (0-based).
    pub fn stage_channels(&self, i: usize) -> usize {
        self.stages[..=i]
            .iter()
            .flatten()
            .filter_map(|e| match *e {
                LayerEntry::Conv { out_channels, .. } | LayerEntry::Mb { out_channels, .. } => Some(out_channels),
                LayerEntry::Sea { .. } => None,
            })
            .last()
            .unwrap_or(3)
    }

    /// Down-sampling factor of stage `i` relative to the input.
    pub fn stage_scale(&self, i: usize) -> usize {
        self.stages[..=i].iter().flatten().map(LayerEntry::stride).product()
    }

    /// Structural checks: six stages, each halving resolution through its
    /// first entry, attention only after a convolutional entry and never
    /// in the stem.
    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != NUM_STAGES {
            return Err(Error::Config(format!("expected {NUM_STAGES} stages, got {}", self.stages.len())));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            let Some(first) = stage.first() else {
                return Err(Error::Config(format!("stage {} is empty", i + 1)));
            };
            if first.stride() != 2 || matches!(first, LayerEntry::Sea { .. }) {
                return Err(Error::Config(format!(
                    "stage {} must open with a stride-2 Conv or MB entry, got {first:?}",
                    i + 1
                )));
            }
            if i == 0 && !matches!(first, LayerEntry::Conv { .. }) {
                return Err(Error::Config("stage 1 must open with a Conv entry".into()));
            }
            for e in &stage[1..] {
                if e.stride() != 1 {
                    return Err(Error::Config(format!("stage {}: only the first entry may stride, got {e:?}", i + 1)));
                }
            }
            for e in stage {
                match *e {
                    LayerEntry::Sea { layers, heads } => {
                        if i < STEM_STAGES {
                            return Err(Error::Config(format!("stage {} is in the stem and cannot hold Sea layers", i + 1)));
                        }
                        if layers == 0 || heads == 0 {
                            return Err(Error::Config(format!("stage {}: empty Sea entry {e:?}", i + 1)));
                        }
                    }
                    LayerEntry::Conv { kernel, out_channels, .. } | LayerEntry::Mb { kernel, out_channels, .. } => {
                        if kernel % 2 == 0 || out_channels == 0 {
                            return Err(Error::Config(format!("stage {}: bad entry {e:?}", i + 1)));
                        }
                    }
                }
            }
        }
        if self.fusion_dims.contains(&0) {
            return Err(Error::Config("fusion_dims must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: VariantSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("variant specs serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_scale() {
        for n in VariantName::ALL {
            let s = VariantSpec::preset(n);
            s.validate().unwrap();
            let scales: Vec<usize> = (0..6).map(|i| s.stage_scale(i)).collect();
            assert_eq!(scales, [2, 4, 8, 16, 32, 64]);
        }
        assert_eq!(VariantSpec::preset(VariantName::B).fusion_dims, [128, 160]);
        assert_eq!(VariantSpec::preset(VariantName::T).fusion_dims, [85, 100]);
    }

    #[test]
    fn entries_round_trip_as_tuples() {
        let e = mb(3, 4, 16, 2);
        let v: Value = e.into();
        assert_eq!(v, json!(["MB", 3, 4, 16, 2]));
        assert_eq!(LayerEntry::try_from(v).unwrap(), e);
        let half: LayerEntry = serde_json::from_str(r#"["MB", 3, 1.5, 16, 1]"#).unwrap();
        assert!(matches!(half, LayerEntry::Mb { expansion, .. } if expansion == 1.5));
        assert!(serde_json::from_str::<LayerEntry>(r#"["Sea", 2]"#).is_err());
        assert!(serde_json::from_str::<LayerEntry>(r#"["Pool", 2, 2]"#).is_err());
        let spec = VariantSpec::preset(VariantName::L);
        assert_eq!(VariantSpec::from_json(&spec.to_json()).unwrap(), spec);
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut s = VariantSpec::preset(VariantName::T);
        s.stages[1].insert(0, sea(1, 2));
        assert!(s.validate().is_err());
        let mut s = VariantSpec::preset(VariantName::T);
        s.stages.pop();
        assert!(s.validate().is_err());
        assert!("X".parse::<VariantName>().unwrap_err().to_string().contains("T, S, B, L"));
    }
}
