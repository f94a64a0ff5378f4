use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqueezeMode {
    MeanPool,
    MaxPool,
    /// Learned softmax-normalized mask for the squeeze and an unnormalized
    /// learned mask for the expand.
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhanceMode {
    Mul,
    Add,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhanceInput {
    ConcatQkv,
    ConvX,
    UpconvX,
}

/// Hyperparameters of one attention block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub channels: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub heads: usize,
    pub pos_embed_len: usize,
    pub squeeze_mode: SqueezeMode,
    pub enhance_mode: EnhanceMode,
    pub enhance_input: EnhanceInput,
}

pub const DEFAULT_POS_EMBED_LEN: usize = 16;

impl AttentionConfig {
    /// Defaults used by the backbone: `C_v = heads·per_head`, `C_qk = C_v/2`.
    pub fn with_heads(channels: usize, heads: usize, value_per_head: usize) -> Self {
        let value_dim = heads * value_per_head;
        AttentionConfig {
            channels,
            key_dim: value_dim / 2,
            value_dim,
            heads,
            pos_embed_len: DEFAULT_POS_EMBED_LEN,
            squeeze_mode: SqueezeMode::MeanPool,
            enhance_mode: EnhanceMode::Mul,
            enhance_input: EnhanceInput::ConcatQkv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self;
        if c.channels == 0 || c.key_dim == 0 || c.value_dim == 0 || c.heads == 0 {
            return Err(Error::Config(format!("attention dims must be positive: {c:?}")));
        }
        if c.key_dim % c.heads != 0 || c.value_dim % c.heads != 0 {
            return Err(Error::Config(format!(
                "key_dim {} and value_dim {} must both divide into {} heads",
                c.key_dim, c.value_dim, c.heads
            )));
        }
        if c.pos_embed_len < 2 {
            return Err(Error::Config(format!(
                "pos_embed_len must be >= 2, got {}",
                c.pos_embed_len
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.key_dim / self.heads
    }

    /// Channel count of the enhancement kernel's input.
    pub fn enhance_channels(&self) -> usize {
        match self.enhance_input {
            EnhanceInput::ConcatQkv | EnhanceInput::UpconvX => 2 * self.key_dim + self.value_dim,
            EnhanceInput::ConvX => self.channels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_field_names_are_fixed() {
        let c = AttentionConfig::with_heads(64, 4, 16);
        let v: serde_json::Value = serde_json::to_value(&c).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "channels",
                "enhance_input",
                "enhance_mode",
                "heads",
                "key_dim",
                "pos_embed_len",
                "squeeze_mode",
                "value_dim"
            ]
        );
        assert_eq!(v["squeeze_mode"], "mean_pool");
        assert_eq!(v["enhance_input"], "concat_qkv");
        let back: AttentionConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation() {
        let mut c = AttentionConfig::with_heads(32, 4, 8);
        assert_eq!((c.key_dim, c.value_dim), (16, 32));
        assert!(c.validate().is_ok());
        c.key_dim = 6;
        assert!(c.validate().is_err());
        c.key_dim = 16;
        c.pos_embed_len = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn concat_qkv_is_twice_value_dim() {
        let c = AttentionConfig::with_heads(64, 8, 8);
        assert_eq!(c.enhance_channels(), 2 * c.value_dim);
    }
}
