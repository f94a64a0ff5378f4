//! A distillation loss small enough for an element-wise finite-difference
//! check: real decoders and upsample modules on random feature tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::suites::{randomize_bn, structured_input};
use crate::analysis::{gradcheck, GradCheckOptions, GradCheckReport, ScalarProgram};
use crate::backbone::{FusionMode, SegDecoder};
use crate::error::Result;
use crate::graph::Graph;
use crate::nn::{Init, ParamStore, Role, Run};
use crate::ops::{LabelMap, IGNORE_INDEX};
use crate::scalar::Scalar;

use super::{
    aligned_losses, DistillConfig, FeatureAligner, LossParts, StudentFeatures, TeacherFeatures, UpsampleKind,
    ALIGN_SCOPE, STUDENT_SCOPE, TEACHER_SCOPE,
};

const CLASSES: usize = 3;
const LOW: [usize; 4] = [4, 4, 6, 8];
const GATE: [usize; 4] = [3, 4, 4, 6];
/// Teacher logit side; student spatial feature is half of it.
const SIDE: usize = 8;

/// Student spatial feature `4×4`, context stages `2×2`, `1×1`, `1×1`; the
/// teacher sits at twice each of those.
pub struct ToyProblem {
    pub student_decoder: SegDecoder,
    pub teacher_decoder: SegDecoder,
    pub aligner: FeatureAligner,
    pub labels: LabelMap,
    pub config: DistillConfig,
}

fn decoder(init: &mut Init<f64>) -> Result<SegDecoder> {
    SegDecoder::new(init, LOW[0], [LOW[2], LOW[3]], [5, 6], CLASSES, FusionMode::SigmoidMul)
}

fn table(init: &mut Init<f64>, name: &str, shape: [usize; 3], seed: u64) -> Result<()> {
    init.tensor(name, Role::Table, structured_input(shape[0], shape[1], shape[2], seed))
}

impl ToyProblem {
    pub fn build(seed: u64, kind: UpsampleKind) -> Result<(Self, ParamStore<f64>)> {
        let mut merged = ParamStore::new();

        let mut init = Init::new(seed);
        let student_decoder = decoder(&mut init)?;
        let h = SIDE / 2;
        table(&mut init, "feat.spatial", [LOW[0], h, h], seed ^ 0x10)?;
        table(&mut init, "feat.stage4", [LOW[1], h / 2, h / 2], seed ^ 0x11)?;
        table(&mut init, "feat.stage5", [LOW[2], 1, 1], seed ^ 0x12)?;
        table(&mut init, "feat.stage6", [LOW[3], 1, 1], seed ^ 0x13)?;
        table(&mut init, "feat.gate0", [GATE[0], SIDE, SIDE], seed ^ 0x14)?;
        table(&mut init, "feat.gate3", [GATE[3], 2, 2], seed ^ 0x15)?;
        merged.absorb(STUDENT_SCOPE, &init.finish())?;

        let mut init = Init::new(seed ^ 0x7e);
        let teacher_decoder = decoder(&mut init)?;
        table(&mut init, "feat.stage4", [LOW[1], h, h], seed ^ 0x20)?;
        table(&mut init, "feat.stage5", [LOW[2], 2, 2], seed ^ 0x21)?;
        table(&mut init, "feat.stage6", [LOW[3], 2, 2], seed ^ 0x22)?;
        table(&mut init, "logits", [CLASSES, SIDE, SIDE], seed ^ 0x23)?;
        merged.absorb(TEACHER_SCOPE, &init.finish())?;

        let mut init = Init::new(seed ^ 0xa1);
        let aligner = FeatureAligner::with_channels(&mut init, LOW, GATE, kind)?;
        merged.absorb(ALIGN_SCOPE, &init.finish())?;
        randomize_bn(&mut merged, seed ^ 0xb2);

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1ab);
        let labels = (0..SIDE * SIDE)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    IGNORE_INDEX
                } else {
                    rng.gen_range(0..CLASSES as u32)
                }
            })
            .collect();
        let problem = ToyProblem {
            student_decoder,
            teacher_decoder,
            aligner,
            labels: LabelMap::new(SIDE, SIDE, labels)?,
            config: DistillConfig {
                upsample: kind,
                ..Default::default()
            },
        };
        Ok((problem, merged))
    }
}

impl ScalarProgram for ToyProblem {
    fn run<T: Scalar, G: Graph<T>>(&self, g: &mut G, params: &ParamStore<T>) -> Result<G::Var> {
        let (sp, tp, ap) = (params.subset(STUDENT_SCOPE), params.subset(TEACHER_SCOPE), params.subset(ALIGN_SCOPE));

        g.set_scope(STUDENT_SCOPE);
        let student = {
            let mut r = Run::new(g, &sp);
            let spatial = r.p("feat.spatial")?;
            let c4 = r.p("feat.stage4")?;
            StudentFeatures {
                context: [c4.clone(), r.p("feat.stage5")?, r.p("feat.stage6")?],
                gates: [r.p("feat.gate0")?, spatial.clone(), c4, r.p("feat.gate3")?],
                spatial,
            }
        };

        g.set_scope(TEACHER_SCOPE);
        g.set_trainable(false);
        let teacher = {
            let mut r = Run::new(g, &tp);
            TeacherFeatures {
                context: [r.p("feat.stage4")?, r.p("feat.stage5")?, r.p("feat.stage6")?],
                logits: r.p("logits")?,
            }
        };
        g.set_trainable(true);

        let parts = LossParts {
            student_decoder: &self.student_decoder,
            student_params: &sp,
            teacher_decoder: &self.teacher_decoder,
            teacher_params: &tp,
            aligner: &self.aligner,
            aligner_params: &ap,
        };
        Ok(aligned_losses(g, &parts, &student, &teacher, &self.labels, &self.config)?.total)
    }
}

/// Checks the gradient of the summed loss with respect to every student
/// and aligner tensor. The upsample kind rotates with the seed.
pub fn gradcheck_total(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let kind = [UpsampleKind::MobileNet, UpsampleKind::Conv, UpsampleKind::MobileNet, UpsampleKind::Bilinear]
        [(seed % 4) as usize];
    let (prog, params) = ToyProblem::build(seed, kind)?;
    let mut opts = opts.clone();
    opts.prefixes = vec![STUDENT_SCOPE.into(), ALIGN_SCOPE.into()];
    if opts.max_per_tensor.is_none() {
        opts.max_per_tensor = Some(6);
    }
    gradcheck(&prog, &params, &opts)
}
