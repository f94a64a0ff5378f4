//! Multi-resolution distillation: a teacher sees the full image, a student
//! sees it average-pooled by 2, and learned upsample modules bring student
//! features back to the teacher's resolution for comparison.
//!
//! The upsampled spatial and context features also replace the student's
//! own decoder inputs, so student logits come out at the teacher's logit
//! resolution. Four loss terms are summed without weights:
//!
//! - `l_cls`: cross-entropy of the student logits against the labels.
//! - `l_cross`: cross-entropy of the teacher's (frozen) decoder applied to
//!   the upsampled student features.
//! - `l_feat`: negative cosine similarity against the teacher's three
//!   context-stage features, averaged over the stages.
//! - `l_out`: `KL(teacher ‖ student)` over the class axis.

mod toy;
mod upsample;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backbone::{SegDecoder, SegModel, VariantSpec};
use crate::error::{Error, Result};
use crate::graph::{scalar_value, Eager, Graph, Tape};
use crate::nn::{Init, ParamStore, Run};
use crate::ops::{self, LabelMap};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use toy::{gradcheck_total, ToyProblem};
pub use upsample::{UpsampleKind, UpsampleModule, MAIN_EXPANSION, MAIN_KERNEL};

/// Graph scopes, so tape leaves of the three parameter sets never collide.
pub const STUDENT_SCOPE: &str = "student.";
pub const TEACHER_SCOPE: &str = "teacher.";
pub const ALIGN_SCOPE: &str = "align.";

/// Mean over positions of `−cos` between channel vectors.
pub fn feature_similarity_loss<T: Scalar>(student_up: &Tensor<T>, teacher: &Tensor<T>) -> Result<T> {
    ops::neg_cosine(student_up, teacher)
}

/// Mean over positions of `KL(softmax(teacher) ‖ softmax(student))`.
pub fn output_similarity_loss<T: Scalar>(student: &Tensor<T>, teacher: &Tensor<T>) -> Result<T> {
    ops::kl_divergence(student, teacher)
}

/// Mean cross-entropy over labelled positions and how many there were.
pub fn cross_entropy_loss<T: Scalar>(logits: &Tensor<T>, labels: &LabelMap) -> Result<(T, usize)> {
    ops::cross_entropy(logits, labels)
}

/// Which loss terms enter the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossToggles {
    pub cls: bool,
    pub cross: bool,
    pub feat: bool,
    pub out: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles {
            cls: true,
            cross: true,
            feat: true,
            out: true,
        }
    }
}

impl LossToggles {
    pub const NONE: LossToggles = LossToggles {
        cls: false,
        cross: false,
        feat: false,
        out: false,
    };

    /// Terms added one at a time: cls, then out, feat and cross.
    pub fn ladder() -> [LossToggles; 4] {
        let a = LossToggles {
            cls: true,
            ..Self::NONE
        };
        let b = LossToggles { out: true, ..a };
        let c = LossToggles { feat: true, ..b };
        let d = LossToggles { cross: true, ..c };
        [a, b, c, d]
    }

    /// Comma-separated term names, e.g. `cls,out`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut t = Self::NONE;
        for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "cls" => t.cls = true,
                "cross" => t.cross = true,
                "feat" => t.feat = true,
                "out" => t.out = true,
                other => {
                    return Err(Error::Argument(format!(
                        "unknown loss term `{other}` (cls, cross, feat, out)"
                    )))
                }
            }
        }
        if t == Self::NONE {
            return Err(Error::Argument("at least one loss term is required".into()));
        }
        Ok(t)
    }

    fn any(self) -> bool {
        self != Self::NONE
    }
}

impl std::fmt::Display for LossToggles {
    /// The form `parse` accepts.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let on = [("cls", self.cls), ("cross", self.cross), ("feat", self.feat), ("out", self.out)];
        let names: Vec<&str> = on.iter().filter(|t| t.1).map(|t| t.0).collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub upsample: UpsampleKind,
    pub losses: LossToggles,
    /// Softmax temperature of the output loss, which is scaled by `τ²`.
    pub temperature: f64,
    /// Feeds the student the full-resolution image and skips upsampling.
    pub same_resolution: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            upsample: UpsampleKind::default(),
            losses: LossToggles::default(),
            temperature: 1.0,
            same_resolution: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !self.losses.any() {
            return Err(Error::Config("no loss term enabled".into()));
        }
        Ok(())
    }
}

/// Loss values of one step. Disabled terms are 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillLossReport {
    pub l_cls: f64,
    pub l_cross: f64,
    pub l_feat: f64,
    pub l_out: f64,
    pub total: f64,
    /// Non-ignored label positions; 0 means both cross-entropy terms were
    /// defined as 0.
    pub labeled_positions: usize,
}

impl DistillLossReport {
    pub fn empty_labels(&self) -> bool {
        self.labeled_positions == 0
    }
}

/// Upsample modules for the spatial feature and the three context stages.
#[derive(Clone, Debug)]
pub struct FeatureAligner {
    pub kind: UpsampleKind,
    pub spatial: UpsampleModule,
    pub context: [UpsampleModule; 3],
}

impl FeatureAligner {
    /// `low[i]` channels gated by `gate[i]` channels; index 0 is the spatial
    /// feature, 1..4 the context stages.
    pub fn with_channels<T: Scalar>(init: &mut Init<T>, low: [usize; 4], gate: [usize; 4], kind: UpsampleKind) -> Result<Self> {
        let m = |init: &mut Init<T>, name: &str, i: usize| UpsampleModule::new(init, name, low[i], gate[i], kind);
        Ok(FeatureAligner {
            kind,
            spatial: m(init, "spatial", 0)?,
            context: [m(init, "stage4", 1)?, m(init, "stage5", 2)?, m(init, "stage6", 3)?],
        })
    }

    /// Each stage is gated by the stage before it.
    pub fn for_spec<T: Scalar>(init: &mut Init<T>, spec: &VariantSpec, kind: UpsampleKind) -> Result<Self> {
        let c = |i| spec.stage_channels(i);
        Self::with_channels(init, [c(2), c(3), c(4), c(5)], [c(1), c(2), c(3), c(4)], kind)
    }
}

/// Student features at the student's resolution.
pub struct StudentFeatures<V> {
    pub spatial: V,
    pub context: [V; 3],
    /// Gate inputs for the spatial feature and each context stage, at twice
    /// the resolution of the feature they gate.
    pub gates: [V; 4],
}

impl<V: Clone> StudentFeatures<V> {
    /// From six stage outputs (1/2 .. 1/64 scale).
    pub fn from_stages(stages: &[V]) -> Self {
        StudentFeatures {
            spatial: stages[2].clone(),
            context: [stages[3].clone(), stages[4].clone(), stages[5].clone()],
            gates: [stages[1].clone(), stages[2].clone(), stages[3].clone(), stages[4].clone()],
        }
    }
}

pub struct TeacherFeatures<V> {
    pub context: [V; 3],
    pub logits: V,
}

/// Modules and parameters the loss needs besides the features.
pub struct LossParts<'a, T: Scalar> {
    pub student_decoder: &'a SegDecoder,
    pub student_params: &'a ParamStore<T>,
    pub teacher_decoder: &'a SegDecoder,
    pub teacher_params: &'a ParamStore<T>,
    pub aligner: &'a FeatureAligner,
    pub aligner_params: &'a ParamStore<T>,
}

/// Graph values of the enabled terms and their sum.
pub struct LossVars<V> {
    pub l_cls: Option<V>,
    pub l_cross: Option<V>,
    pub l_feat: Option<V>,
    pub l_out: Option<V>,
    pub total: V,
    pub labeled_positions: usize,
}

impl<V> LossVars<V> {
    pub fn report<T: Scalar, G: Graph<T, Var = V>>(&self, g: &G) -> Result<DistillLossReport> {
        let val = |v: &Option<V>| -> Result<f64> {
            match v {
                Some(v) => scalar_value(g, v)
                    .map(|t| t.as_f64())
                    .ok_or_else(|| Error::Config("loss graph carries no values".into())),
                None => Ok(0.0),
            }
        };
        let (l_cls, l_cross, l_feat, l_out) = (val(&self.l_cls)?, val(&self.l_cross)?, val(&self.l_feat)?, val(&self.l_out)?);
        Ok(DistillLossReport {
            l_cls,
            l_cross,
            l_feat,
            l_out,
            total: l_cls + l_cross + l_feat + l_out,
            labeled_positions: self.labeled_positions,
        })
    }
}

/// The four losses from already-computed features. The teacher decoder
/// runs frozen; gradients reach the student features and the aligner.
pub fn aligned_losses<T: Scalar, G: Graph<T>>(
    g: &mut G,
    parts: &LossParts<'_, T>,
    student: &StudentFeatures<G::Var>,
    teacher: &TeacherFeatures<G::Var>,
    labels: &LabelMap,
    cfg: &DistillConfig,
) -> Result<LossVars<G::Var>> {
    cfg.validate()?;
    let (up_s, up_c) = if cfg.same_resolution {
        (student.spatial.clone(), student.context.clone())
    } else {
        g.set_scope(ALIGN_SCOPE);
        let mut r = Run::new(g, parts.aligner_params);
        let a = parts.aligner;
        let s = a.spatial.forward(&mut r, &student.spatial, &student.gates[0])?;
        let mut c = Vec::with_capacity(3);
        for i in 0..3 {
            c.push(a.context[i].forward(&mut r, &student.context[i], &student.gates[i + 1])?);
        }
        (s, [c[0].clone(), c[1].clone(), c[2].clone()])
    };

    let losses = cfg.losses;
    let mut labeled = labels.valid_count();
    let mut terms: [Option<G::Var>; 4] = [None, None, None, None];
    if losses.cls || losses.out {
        g.set_scope(STUDENT_SCOPE);
        let mut r = Run::new(g, parts.student_params);
        let (_, logits) = parts.student_decoder.forward(&mut r, &up_s, &up_c[1], &up_c[2])?;
        if losses.cls {
            let (l, n) = g.cross_entropy(&logits, labels)?;
            labeled = n;
            terms[0] = Some(l);
        }
        if losses.out {
            terms[3] = Some(temperature_kl(g, &logits, &teacher.logits, cfg.temperature)?);
        }
    }
    if losses.cross {
        g.set_scope(TEACHER_SCOPE);
        g.set_trainable(false);
        let out = {
            let mut r = Run::new(g, parts.teacher_params);
            parts.teacher_decoder.forward(&mut r, &up_s, &up_c[1], &up_c[2])
        };
        g.set_trainable(true);
        let (_, logits) = out?;
        let (l, n) = g.cross_entropy(&logits, labels)?;
        labeled = n;
        terms[1] = Some(l);
    }
    if losses.feat {
        let mut acc = g.neg_cosine(&up_c[0], &teacher.context[0])?;
        for i in 1..3 {
            let t = g.neg_cosine(&up_c[i], &teacher.context[i])?;
            acc = g.add(&acc, &t)?;
        }
        terms[2] = Some(g.scale(&acc, 1.0 / 3.0)?);
    }
    g.set_scope("");

    let mut total: Option<G::Var> = None;
    for t in terms.iter().flatten() {
        total = Some(match total {
            Some(acc) => g.add(&acc, t)?,
            None => t.clone(),
        });
    }
    let [l_cls, l_cross, l_feat, l_out] = terms;
    Ok(LossVars {
        l_cls,
        l_cross,
        l_feat,
        l_out,
        total: total.expect("validated: at least one term"),
        labeled_positions: labeled,
    })
}

fn temperature_kl<T: Scalar, G: Graph<T>>(g: &mut G, student: &G::Var, teacher: &G::Var, tau: f64) -> Result<G::Var> {
    if tau == 1.0 {
        return g.kl_divergence(student, teacher);
    }
    let s = g.scale(student, 1.0 / tau)?;
    let t = g.scale(teacher, 1.0 / tau)?;
    let kl = g.kl_divergence(&s, &t)?;
    g.scale(&kl, tau * tau)
}

/// A teacher, a student of the same family, and the aligner between them.
#[derive(Clone)]
pub struct Distiller<T: Scalar> {
    pub teacher: SegModel<T>,
    pub student: SegModel<T>,
    pub aligner: FeatureAligner,
    pub aligner_params: ParamStore<T>,
    pub config: DistillConfig,
}

impl<T: Scalar> Distiller<T> {
    pub fn new(teacher: SegModel<T>, student: SegModel<T>, config: DistillConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (ts, ss) = (&teacher.net.backbone.spec, &student.net.backbone.spec);
        let mismatch = (1..6).find(|&i| ts.stage_channels(i) != ss.stage_channels(i));
        if let Some(i) = mismatch {
            return Err(Error::Config(format!(
                "teacher and student differ at stage {}: {} vs {} channels",
                i + 1,
                ts.stage_channels(i),
                ss.stage_channels(i)
            )));
        }
        if teacher.net.num_classes != student.net.num_classes {
            return Err(Error::Config(format!(
                "teacher has {} classes, student {}",
                teacher.net.num_classes, student.net.num_classes
            )));
        }
        let mut init = Init::new(seed);
        let aligner = FeatureAligner::for_spec(&mut init, ss, config.upsample)?;
        Ok(Distiller {
            teacher,
            student,
            aligner,
            aligner_params: init.finish(),
            config,
        })
    }

    /// Minimum side length that the student still halves down to 1/64.
    pub fn input_multiple(&self) -> usize {
        if self.config.same_resolution {
            64
        } else {
            128
        }
    }

    pub fn losses<G: Graph<T>>(&self, g: &mut G, x_full: &G::Var, labels: &LabelMap) -> Result<LossVars<G::Var>> {
        let shape = g.shape(x_full);
        let m = self.input_multiple();
        match shape[..] {
            [3, h, w] if h % m == 0 && w % m == 0 && h > 0 && w > 0 => {
                if (labels.h, labels.w) != (h / 8, w / 8) {
                    return Err(Error::Input(format!(
                        "labels are {}x{}, expected {}x{} (1/8 of the input)",
                        labels.h,
                        labels.w,
                        h / 8,
                        w / 8
                    )));
                }
            }
            _ => return Err(Error::Input(format!("distillation input must be [3, H, W] with H, W multiples of {m}, got {shape:?}"))),
        }

        g.set_scope(TEACHER_SCOPE);
        g.set_trainable(false);
        let t_out = {
            let mut r = Run::new(g, &self.teacher.params);
            self.teacher.net.forward(&mut r, x_full)
        };
        g.set_trainable(true);
        let t_out = t_out?;

        let x_student = if self.config.same_resolution {
            x_full.clone()
        } else {
            g.avg_pool2d(x_full, 2, 2)?
        };
        g.set_scope(STUDENT_SCOPE);
        let stages = {
            let mut r = Run::new(g, &self.student.params);
            self.student.net.backbone.forward(&mut r, &x_student)?
        };
        let student = StudentFeatures::from_stages(&stages);
        let teacher = TeacherFeatures {
            context: [t_out.stages[3].clone(), t_out.stages[4].clone(), t_out.stages[5].clone()],
            logits: t_out.logits,
        };
        let parts = LossParts {
            student_decoder: &self.student.net.decoder,
            student_params: &self.student.params,
            teacher_decoder: &self.teacher.net.decoder,
            teacher_params: &self.teacher.params,
            aligner: &self.aligner,
            aligner_params: &self.aligner_params,
        };
        aligned_losses(g, &parts, &student, &teacher, labels, &self.config)
    }

    pub fn step(&self, x_full: &Tensor<T>, labels: &LabelMap) -> Result<DistillLossReport> {
        let mut g = Eager;
        let vars = self.losses(&mut g, x_full, labels)?;
        vars.report(&g)
    }

    /// Loss report plus gradients of the total, keyed by scoped name
    /// (`student.*`, `align.*`). The teacher is frozen and has none.
    pub fn step_with_gradients(
        &self,
        x_full: &Tensor<T>,
        labels: &LabelMap,
    ) -> Result<(DistillLossReport, BTreeMap<String, Tensor<T>>)> {
        let mut tape = Tape::new();
        let x = tape.constant(x_full.clone());
        let vars = self.losses(&mut tape, &x, labels)?;
        let report = vars.report(&tape)?;
        let grads = tape.backward(vars.total, None)?;
        Ok((report, grads))
    }

    /// Learnable parameters added by the aligner.
    pub fn aligner_param_count(&self) -> usize {
        self.aligner_params.total()
    }
}

/// One step with the default configuration and a fresh aligner.
pub fn distill_step<T: Scalar>(
    teacher: &SegModel<T>,
    student: &SegModel<T>,
    x_full: &Tensor<T>,
    labels: &LabelMap,
) -> Result<DistillLossReport> {
    Distiller::new(teacher.clone(), student.clone(), DistillConfig::default(), 0)?.step(x_full, labels)
}
