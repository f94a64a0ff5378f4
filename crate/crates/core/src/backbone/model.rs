use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cost::measure_macs;
use crate::error::{Error, Result};
use crate::graph::{Eager, Graph, ShapeGraph};
use crate::nn::{global_avg_pool, Act, Conv, ConvBn, Init, MobileNetBlock, MobileNetBlockSpec, ParamStore, Run};
use crate::scalar::Scalar;
use crate::sea::{AttentionConfig, EnhanceInput, EnhanceMode, SeaFormerLayer, SqueezeMode};
use crate::tensor::Tensor;

use super::variant::{LayerEntry, VariantName, VariantSpec, NUM_STAGES, SEA_FFN_RATIO, SEA_KEY_PER_HEAD, STEM_STAGES};

/// How a fusion block combines its two projected inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    SigmoidMul,
    Add,
    Mul,
    SigmoidAdd,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::SigmoidMul, FusionMode::Add, FusionMode::Mul, FusionMode::SigmoidAdd];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Seg,
    Cls,
}

/// Knobs that are not part of the architecture table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub squeeze_mode: SqueezeMode,
    pub enhance_mode: EnhanceMode,
    pub enhance_input: EnhanceInput,
    pub fusion_mode: FusionMode,
    /// Query/key width per head in context stages 4-6 (value width is twice this).
    pub key_per_head: [usize; 3],
    /// Feed-forward expansion of attention layers in context stages 4-6.
    pub ffn_ratio: [usize; 3],
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            squeeze_mode: SqueezeMode::MeanPool,
            enhance_mode: EnhanceMode::Mul,
            enhance_input: EnhanceInput::ConcatQkv,
            fusion_mode: FusionMode::SigmoidMul,
            key_per_head: SEA_KEY_PER_HEAD,
            ffn_ratio: SEA_FFN_RATIO,
        }
    }
}

#[derive(Clone, Debug)]
pub enum StageLayer {
    Conv(ConvBn),
    Mb(MobileNetBlock),
    Sea(SeaFormerLayer),
}

impl StageLayer {
    fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        match self {
            StageLayer::Conv(c) => c.forward(r, x),
            StageLayer::Mb(m) => m.forward(r, x),
            StageLayer::Sea(s) => s.forward(r, x),
        }
    }
}

/// Stem (stages 1-3) and context branch (stages 4-6).
#[derive(Clone, Debug)]
pub struct Backbone {
    pub spec: VariantSpec,
    pub stages: Vec<Vec<StageLayer>>,
}

impl Backbone {
    pub fn new<T: Scalar>(init: &mut Init<T>, spec: &VariantSpec, opts: &ModelOptions) -> Result<Self> {
        spec.validate()?;
        let mut c = 3;
        let mut stages = Vec::with_capacity(NUM_STAGES);
        for (i, entries) in spec.stages.iter().enumerate() {
            let mut layers = Vec::new();
            for (j, e) in entries.iter().enumerate() {
                let name = format!("stage{}.{j}", i + 1);
                match *e {
                    LayerEntry::Conv {
                        kernel,
                        out_channels,
                        stride,
                    } => {
                        layers.push(StageLayer::Conv(ConvBn::new(
                            init,
                            &name,
                            c,
                            out_channels,
                            kernel,
                            stride,
                            1,
                            Act::Relu6,
                        )?));
                        c = out_channels;
                    }
                    LayerEntry::Mb {
                        kernel,
                        expansion,
                        out_channels,
                        stride,
                    } => {
                        let spec = MobileNetBlockSpec {
                            kernel,
                            expansion,
                            out_channels,
                            stride,
                        };
                        layers.push(StageLayer::Mb(MobileNetBlock::new(init, &name, c, spec)?));
                        c = out_channels;
                    }
                    LayerEntry::Sea { layers: n, heads } => {
                        let ctx = i - STEM_STAGES;
                        let cfg = attention_config(c, heads, ctx, opts);
                        for l in 0..n {
                            layers.push(StageLayer::Sea(SeaFormerLayer::new(
                                init,
                                &format!("{name}.{l}"),
                                cfg.clone(),
                                opts.ffn_ratio[ctx],
                            )?));
                        }
                    }
                }
            }
            stages.push(layers);
        }
        Ok(Backbone {
            spec: spec.clone(),
            stages,
        })
    }

    /// Outputs of all six stages; index 2 is the shared 1/8 feature.
    pub fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<Vec<G::Var>> {
        let mut feats = Vec::with_capacity(NUM_STAGES);
        let mut y = x.clone();
        for stage in &self.stages {
            for layer in stage {
                y = layer.forward(r, &y)?;
            }
            feats.push(y.clone());
        }
        Ok(feats)
    }

    /// Like [`Backbone::forward`], with the MACs recorded by each stage.
    pub fn forward_counted<T: Scalar, G: Graph<T>>(
        &self,
        r: &mut Run<'_, T, G>,
        x: &G::Var,
    ) -> Result<(Vec<G::Var>, Vec<u64>)> {
        let mut feats = Vec::with_capacity(NUM_STAGES);
        let mut macs = Vec::with_capacity(NUM_STAGES);
        let mut y = x.clone();
        for stage in &self.stages {
            let (res, m) = measure_macs(|| {
                let mut z = y.clone();
                for layer in stage {
                    z = layer.forward(r, &z)?;
                }
                Ok::<_, Error>(z)
            });
            y = res?;
            feats.push(y.clone());
            macs.push(m);
        }
        Ok((feats, macs))
    }

    /// Stages 1-3 only.
    pub fn stem<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let mut y = x.clone();
        for layer in self.stages[..STEM_STAGES].iter().flatten() {
            y = layer.forward(r, &y)?;
        }
        Ok(y)
    }

    /// Stages 4-6 from the shared feature.
    pub fn context<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x_s: &G::Var) -> Result<Vec<G::Var>> {
        let mut feats = Vec::new();
        let mut y = x_s.clone();
        for stage in &self.stages[STEM_STAGES..] {
            for layer in stage {
                y = layer.forward(r, &y)?;
            }
            feats.push(y.clone());
        }
        Ok(feats)
    }

    pub fn channels(&self, stage: usize) -> usize {
        self.spec.stage_channels(stage)
    }
}

/// Attention hyperparameters for a layer in context stage `ctx` (0-2).
pub fn attention_config(channels: usize, heads: usize, ctx: usize, opts: &ModelOptions) -> AttentionConfig {
    let mut cfg = AttentionConfig::with_heads(channels, heads, 2 * opts.key_per_head[ctx]);
    cfg.squeeze_mode = opts.squeeze_mode;
    cfg.enhance_mode = opts.enhance_mode;
    cfg.enhance_input = opts.enhance_input;
    cfg
}

/// Injects a low-resolution context feature into a high-resolution one.
#[derive(Clone, Debug)]
pub struct FusionBlock {
    pub spatial: ConvBn,
    pub context: ConvBn,
    pub mode: FusionMode,
}

impl FusionBlock {
    pub fn new<T: Scalar>(
        init: &mut Init<T>,
        name: &str,
        spatial_channels: usize,
        context_channels: usize,
        dim: usize,
        mode: FusionMode,
    ) -> Result<Self> {
        Ok(FusionBlock {
            spatial: ConvBn::pointwise(init, &format!("{name}.spatial"), spatial_channels, dim, Act::Identity)?,
            context: ConvBn::pointwise(init, &format!("{name}.context"), context_channels, dim, Act::Identity)?,
            mode,
        })
    }

    pub fn forward<T: Scalar, G: Graph<T>>(
        &self,
        r: &mut Run<'_, T, G>,
        spatial: &G::Var,
        context: &G::Var,
    ) -> Result<G::Var> {
        let (s_shape, c_shape) = (r.g.shape(spatial), r.g.shape(context));
        if c_shape[1] > s_shape[1] || c_shape[2] > s_shape[2] {
            return Err(Error::dim(
                "fusion",
                format!("context {c_shape:?} is larger than spatial {s_shape:?}"),
            ));
        }
        let s = self.spatial.forward(r, spatial)?;
        let mut c = self.context.forward(r, context)?;
        if matches!(self.mode, FusionMode::SigmoidMul | FusionMode::SigmoidAdd) {
            c = r.g.sigmoid(&c)?;
        }
        let c = r.g.bilinear_resize(&c, s_shape[1], s_shape[2])?;
        match self.mode {
            FusionMode::SigmoidMul | FusionMode::Mul => r.g.mul(&s, &c),
            FusionMode::SigmoidAdd | FusionMode::Add => r.g.add(&s, &c),
        }
    }
}

/// Two pointwise conv+BN layers with an activation in between.
#[derive(Clone, Debug)]
pub struct LightHead {
    pub hidden: ConvBn,
    pub classify: ConvBn,
}

impl LightHead {
    pub fn new<T: Scalar>(init: &mut Init<T>, name: &str, c_in: usize, num_classes: usize) -> Result<Self> {
        Ok(LightHead {
            hidden: ConvBn::pointwise(init, &format!("{name}.hidden"), c_in, c_in, Act::Relu6)?,
            classify: ConvBn::pointwise(init, &format!("{name}.classify"), c_in, num_classes, Act::Identity)?,
        })
    }

    pub fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let y = self.hidden.forward(r, x)?;
        self.classify.forward(r, &y)
    }
}

/// Spatial branch: the shared feature refined by two fusion blocks, then the
/// light head.
#[derive(Clone, Debug)]
pub struct SegDecoder {
    pub fusion: [FusionBlock; 2],
    pub head: LightHead,
}

impl SegDecoder {
    pub fn new<T: Scalar>(
        init: &mut Init<T>,
        spatial_channels: usize,
        context_channels: [usize; 2],
        dims: [usize; 2],
        num_classes: usize,
        mode: FusionMode,
    ) -> Result<Self> {
        let f1 = FusionBlock::new(init, "fusion1", spatial_channels, context_channels[0], dims[0], mode)?;
        let f2 = FusionBlock::new(init, "fusion2", dims[0], context_channels[1], dims[1], mode)?;
        Ok(SegDecoder {
            fusion: [f1, f2],
            head: LightHead::new(init, "head", dims[1], num_classes)?,
        })
    }

    /// `(fused spatial feature, logits)`.
    pub fn forward<T: Scalar, G: Graph<T>>(
        &self,
        r: &mut Run<'_, T, G>,
        x_s: &G::Var,
        c5: &G::Var,
        c6: &G::Var,
    ) -> Result<(G::Var, G::Var)> {
        let y = self.fusion[0].forward(r, x_s, c5)?;
        let y = self.fusion[1].forward(r, &y, c6)?;
        let logits = self.head.forward(r, &y)?;
        Ok((y, logits))
    }
}

/// Everything a segmentation forward pass exposes.
pub struct SegOutput<V> {
    /// Six stage outputs, from 1/2 to 1/64 scale.
    pub stages: Vec<V>,
    pub fused: V,
    pub logits: V,
}

#[derive(Clone, Debug)]
pub struct SegNet {
    pub backbone: Backbone,
    pub decoder: SegDecoder,
    pub num_classes: usize,
}

impl SegNet {
    pub fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<SegOutput<G::Var>> {
        check_input(&r.g.shape(x))?;
        let stages = self.backbone.forward(r, x)?;
        let (fused, logits) = self.decoder.forward(r, &stages[2], &stages[4], &stages[5])?;
        Ok(SegOutput { stages, fused, logits })
    }
}

#[derive(Clone, Debug)]
pub struct ClsNet {
    pub backbone: Backbone,
    pub linear: Conv,
    pub num_classes: usize,
}

impl ClsNet {
    /// Any `[3, H, W]` image; the global pool absorbs odd stage sizes.
    pub fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        let shape = r.g.shape(x);
        if !matches!(shape[..], [3, _, _]) {
            return Err(Error::Input(format!("expected a [3, H, W] image, got {shape:?}")));
        }
        let stages = self.backbone.forward(r, x)?;
        let pooled = global_avg_pool(r.g, &stages[5])?;
        let y = self.linear.forward(r, &pooled)?;
        r.g.reshape(&y, &[self.num_classes])
    }
}

/// Inputs must be `[3, H, W]` with `H` and `W` multiples of 64 so every
/// stage halves exactly.
pub fn check_input(shape: &[usize]) -> Result<()> {
    match *shape {
        [3, h, w] if h % 64 == 0 && w % 64 == 0 && h > 0 && w > 0 => Ok(()),
        [3, h, w] => Err(Error::Input(format!("input {h}x{w} is not divisible by 64"))),
        _ => Err(Error::Input(format!("expected a [3, H, W] image, got {shape:?}"))),
    }
}

/// Parameters grouped by top-level prefix (`stage1` .. `stage6`, `fusion1`,
/// `fusion2`, `head`, `cls`).
pub fn param_groups<T: Scalar>(params: &ParamStore<T>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (name, e) in params.iter() {
        if e.role.learnable() {
            let group = name.split('.').next().unwrap_or(name).to_string();
            *out.entry(group).or_insert(0) += e.value.len();
        }
    }
    out
}

#[derive(Clone)]
pub struct SegModel<T: Scalar> {
    pub net: SegNet,
    pub params: ParamStore<T>,
    pub options: ModelOptions,
}

#[derive(Clone)]
pub struct ClsModel<T: Scalar> {
    pub net: ClsNet,
    pub params: ParamStore<T>,
    pub options: ModelOptions,
}

impl<T: Scalar> SegModel<T> {
    pub fn build(spec: &VariantSpec, num_classes: usize, opts: ModelOptions, seed: u64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        let mut init = Init::new(seed);
        let backbone = Backbone::new(&mut init, spec, &opts)?;
        let decoder = SegDecoder::new(
            &mut init,
            spec.stage_channels(2),
            [spec.stage_channels(4), spec.stage_channels(5)],
            spec.fusion_dims,
            num_classes,
            opts.fusion_mode,
        )?;
        Ok(SegModel {
            net: SegNet {
                backbone,
                decoder,
                num_classes,
            },
            params: init.finish(),
            options: opts,
        })
    }

    pub fn preset(name: VariantName, num_classes: usize, seed: u64) -> Result<Self> {
        Self::build(&VariantSpec::preset(name), num_classes, ModelOptions::default(), seed)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_all(x)?.logits)
    }

    pub fn forward_all(&self, x: &Tensor<T>) -> Result<SegOutput<Tensor<T>>> {
        let mut g = Eager;
        let mut r = Run::new(&mut g, &self.params);
        self.net.forward(&mut r, x)
    }

    /// MACs of one forward pass at `h × w`, without evaluating it.
    pub fn macs(&self, h: usize, w: usize) -> Result<u64> {
        let mut g = ShapeGraph::<T>::new();
        let mut r = Run::new(&mut g, &self.params);
        let (res, macs) = measure_macs(|| self.net.forward(&mut r, &vec![3, h, w]));
        res?;
        Ok(macs)
    }

    /// MACs per top-level group (`stage1` .. `stage6`, `fusion1`,
    /// `fusion2`, `head`); they sum to [`SegModel::macs`].
    pub fn macs_by_group(&self, h: usize, w: usize) -> Result<BTreeMap<String, u64>> {
        let x = vec![3, h, w];
        check_input(&x)?;
        let mut g = ShapeGraph::<T>::new();
        let mut r = Run::new(&mut g, &self.params);
        let (stages, stage_macs) = self.net.backbone.forward_counted(&mut r, &x)?;
        let mut out = stage_groups(&stage_macs);
        let d = &self.net.decoder;
        let (y, m) = measure_macs(|| d.fusion[0].forward(&mut r, &stages[2], &stages[4]));
        out.insert("fusion1".into(), m);
        let (y, m) = measure_macs(|| d.fusion[1].forward(&mut r, &y?, &stages[5]));
        out.insert("fusion2".into(), m);
        let (res, m) = measure_macs(|| d.head.forward(&mut r, &y?));
        res?;
        out.insert("head".into(), m);
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.params.total()
    }
}

fn stage_groups(macs: &[u64]) -> BTreeMap<String, u64> {
    macs.iter().enumerate().map(|(i, &m)| (format!("stage{}", i + 1), m)).collect()
}

impl<T: Scalar> ClsModel<T> {
    pub fn build(spec: &VariantSpec, num_classes: usize, opts: ModelOptions, seed: u64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        let mut init = Init::new(seed);
        let backbone = Backbone::new(&mut init, spec, &opts)?;
        let linear = Conv::new(&mut init, "cls.linear", spec.stage_channels(5), num_classes, 1, 1, 1, true)?;
        Ok(ClsModel {
            net: ClsNet {
                backbone,
                linear,
                num_classes,
            },
            params: init.finish(),
            options: opts,
        })
    }

    pub fn preset(name: VariantName, num_classes: usize, seed: u64) -> Result<Self> {
        Self::build(&VariantSpec::preset(name), num_classes, ModelOptions::default(), seed)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Eager;
        let mut r = Run::new(&mut g, &self.params);
        self.net.forward(&mut r, x)
    }

    pub fn macs(&self, h: usize, w: usize) -> Result<u64> {
        let mut g = ShapeGraph::<T>::new();
        let mut r = Run::new(&mut g, &self.params);
        let (res, macs) = measure_macs(|| self.net.forward(&mut r, &vec![3, h, w]));
        res?;
        Ok(macs)
    }

    /// MACs per top-level group (`stage1` .. `stage6`, `cls`).
    pub fn macs_by_group(&self, h: usize, w: usize) -> Result<BTreeMap<String, u64>> {
        let mut g = ShapeGraph::<T>::new();
        let mut r = Run::new(&mut g, &self.params);
        let x = vec![3, h, w];
        let (stages, stage_macs) = self.net.backbone.forward_counted(&mut r, &x)?;
        let mut out = stage_groups(&stage_macs);
        let (res, m) = measure_macs(|| {
            let pooled = global_avg_pool(r.g, &stages[5])?;
            self.net.linear.forward(&mut r, &pooled)
        });
        res?;
        out.insert("cls".into(), m);
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.params.total()
    }
}
