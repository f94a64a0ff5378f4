//! Squeeze-enhanced axial attention and the baselines it is compared with.
//!
//! The semantic branch squeezes q, k and v to one token per row and one per
//! column, runs multi-head attention along each squeezed axis and broadcasts
//! (or mask-restores) the two results back over the map. A convolutional
//! kernel on the same inputs yields per-position weights that gate the
//! projected semantic output.

pub mod axial;
mod baseline;
mod block;
mod config;
mod layer;

pub use axial::Axis;
pub use baseline::{baseline_attend, BaselineAttention, BaselineKind};
pub use block::{pos_table_names, DetailEnhancement, SeaAttention};
pub use config::{AttentionConfig, EnhanceInput, EnhanceMode, SqueezeMode, DEFAULT_POS_EMBED_LEN};
pub use layer::{ConvFfn, SeaFormerLayer, DEFAULT_FFN_RATIO};
