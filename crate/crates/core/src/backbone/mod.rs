//! The two-branch segmentation network and its classification twin.
//!
//! Stages 1-3 (the stem) bring the image to 1/8 scale. Stages 4-6 form the
//! context branch down to 1/64, with attention layers where the variant
//! table puts them. The spatial branch keeps the 1/8 feature and receives
//! stage-5 and stage-6 context through two fusion blocks before the light
//! head. The classification model pools stage 6 into a linear layer.

mod model;
mod variant;

pub use model::{
    attention_config, check_input, param_groups, Backbone, ClsModel, ClsNet, FusionBlock, FusionMode, LightHead,
    ModelOptions, SegDecoder, SegModel, SegNet, SegOutput, StageLayer, Task,
};
pub use variant::{
    scaled_fusion_dims, LayerEntry, VariantName, VariantSpec, NUM_STAGES, SEA_FFN_RATIO, SEA_KEY_PER_HEAD,
    STEM_STAGES,
};
