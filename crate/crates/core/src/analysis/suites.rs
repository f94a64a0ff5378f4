//! Named finite-difference suites shared by the test harness and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::Graph;
use crate::nn::{Init, ParamStore, Role, Run};
use crate::ops::{Conv2dGeometry, BatchNormStats, LabelMap, IGNORE_INDEX};
use crate::sea::{AttentionConfig, EnhanceInput, EnhanceMode, SeaAttention, SeaFormerLayer, SqueezeMode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::gradcheck::{gradcheck, weighted_sum, GradCheckOptions, GradCheckReport, ScalarProgram};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Ops,
    Sea,
    Layer,
    Distill,
}

impl Scope {
    /// Pass threshold on the maximum relative error.
    pub fn threshold(self) -> f64 {
        match self {
            Scope::Distill => 1e-4,
            _ => 1e-5,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub check: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Gives batch-norm tensors non-trivial values so every path carries
/// gradient through a real affine map.
pub fn randomize_bn(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<(String, Role)> = store.iter().map(|(n, e)| (n.to_string(), e.role)).collect();
    for (name, role) in names {
        let (lo, hi) = match role {
            Role::BnGamma => (0.5, 1.5),
            Role::BnBeta => (-0.5, 0.5),
            Role::BnMean => (-0.2, 0.2),
            Role::BnVar => (0.5, 1.5),
            _ => continue,
        };
        if let Ok(t) = store.get_mut(&name) {
            for v in t.data_mut() {
                *v = rng.gen_range(lo..hi);
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), lo, hi, rng).expect("valid shape")
}

#[derive(Clone, Copy, Debug)]
enum OpCase {
    Matmul,
    BatchedMatmul,
    Softmax,
    PermuteReshape,
    Concat,
    Broadcast,
    Sigmoid,
    Relu6,
    Reductions,
    Conv,
    GroupedConv,
    BatchNorm,
    Bilinear,
    AvgPool,
    CrossEntropy,
    Kl,
    Cosine,
}

const OP_CASES: [OpCase; 17] = [
    OpCase::Matmul,
    OpCase::BatchedMatmul,
    OpCase::Softmax,
    OpCase::PermuteReshape,
    OpCase::Concat,
    OpCase::Broadcast,
    OpCase::Sigmoid,
    OpCase::Relu6,
    OpCase::Reductions,
    OpCase::Conv,
    OpCase::GroupedConv,
    OpCase::BatchNorm,
    OpCase::Bilinear,
    OpCase::AvgPool,
    OpCase::CrossEntropy,
    OpCase::Kl,
    OpCase::Cosine,
];

struct OpProgram {
    case: OpCase,
    seed: u64,
    stats: Option<BatchNormStats<f64>>,
    labels: Option<LabelMap>,
}

impl OpProgram {
    fn build(case: OpCase, seed: u64) -> Result<(Self, ParamStore<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let put = |p: &mut ParamStore<f64>, name: &str, t: Tensor<f64>| p.insert(name, Role::Weight, t);
        let mut stats = None;
        let mut labels = None;
        match case {
            OpCase::Matmul => {
                put(&mut p, "a", uniform(&mut rng, &[3, 4], -1.0, 1.0))?;
                put(&mut p, "b", uniform(&mut rng, &[4, 5], -1.0, 1.0))?;
            }
            OpCase::BatchedMatmul => {
                put(&mut p, "a", uniform(&mut rng, &[2, 3, 4], -1.0, 1.0))?;
                put(&mut p, "b", uniform(&mut rng, &[2, 4, 3], -1.0, 1.0))?;
            }
            OpCase::Softmax | OpCase::Sigmoid | OpCase::Reductions | OpCase::PermuteReshape => {
                put(&mut p, "a", uniform(&mut rng, &[2, 3, 4], -2.0, 2.0))?;
            }
            OpCase::Concat => {
                put(&mut p, "a", uniform(&mut rng, &[2, 3, 2], -1.0, 1.0))?;
                put(&mut p, "b", uniform(&mut rng, &[2, 1, 2], -1.0, 1.0))?;
            }
            OpCase::Broadcast => {
                put(&mut p, "a", uniform(&mut rng, &[3, 4, 5], -1.0, 1.0))?;
                put(&mut p, "b", uniform(&mut rng, &[1, 4, 1], -1.0, 1.0))?;
                put(&mut p, "c", uniform(&mut rng, &[3, 1, 5], -1.0, 1.0))?;
            }
            OpCase::Relu6 => {
                put(&mut p, "a", uniform(&mut rng, &[3, 4, 4], -3.0, 9.0))?;
            }
            OpCase::Conv => {
                put(&mut p, "x", uniform(&mut rng, &[3, 7, 6], -1.0, 1.0))?;
                put(&mut p, "w", uniform(&mut rng, &[4, 3, 3, 3], -0.5, 0.5))?;
                put(&mut p, "b", uniform(&mut rng, &[4], -0.5, 0.5))?;
            }
            OpCase::GroupedConv => {
                put(&mut p, "x", uniform(&mut rng, &[4, 6, 6], -1.0, 1.0))?;
                put(&mut p, "w", uniform(&mut rng, &[4, 2, 5, 5], -0.5, 0.5))?;
            }
            OpCase::BatchNorm => {
                put(&mut p, "x", uniform(&mut rng, &[3, 2, 4], -1.0, 1.0))?;
                put(&mut p, "gamma", uniform(&mut rng, &[3], 0.5, 1.5))?;
                put(&mut p, "beta", uniform(&mut rng, &[3], -0.5, 0.5))?;
                stats = Some(BatchNormStats {
                    mean: uniform(&mut rng, &[3], -0.3, 0.3),
                    var: uniform(&mut rng, &[3], 0.5, 1.5),
                    eps: 1e-5,
                });
            }
            OpCase::Bilinear | OpCase::AvgPool => {
                put(&mut p, "x", uniform(&mut rng, &[2, 4, 6], -1.0, 1.0))?;
            }
            OpCase::CrossEntropy | OpCase::Kl | OpCase::Cosine => {
                put(&mut p, "a", uniform(&mut rng, &[4, 3, 3], -2.0, 2.0))?;
                put(&mut p, "b", uniform(&mut rng, &[4, 3, 3], -2.0, 2.0))?;
                let data = (0..9)
                    .map(|i| if i == 4 { IGNORE_INDEX } else { rng.gen_range(0..4) })
                    .collect();
                labels = Some(LabelMap::new(3, 3, data)?);
            }
        }
        Ok((
            OpProgram {
                case,
                seed,
                stats,
                labels,
            },
            p,
        ))
    }
}

impl ScalarProgram for OpProgram {
    fn run<T: Scalar, G: Graph<T>>(&self, g: &mut G, p: &ParamStore<T>) -> Result<G::Var> {
        let v = |g: &mut G, n: &str| -> Result<G::Var> { Ok(g.param(n, p.get(n)?)) };
        let y = match self.case {
            OpCase::Matmul | OpCase::BatchedMatmul => {
                let (a, b) = (v(g, "a")?, v(g, "b")?);
                g.matmul(&a, &b)?
            }
            OpCase::Softmax => {
                let a = v(g, "a")?;
                let s1 = g.softmax(&a, 1)?;
                let s2 = g.softmax(&a, 2)?;
                g.add(&s1, &s2)?
            }
            OpCase::PermuteReshape => {
                let a = v(g, "a")?;
                let t = g.permute(&a, &[2, 0, 1])?;
                let r = g.reshape(&t, &[4, 6])?;
                g.scale(&r, -1.5)?
            }
            OpCase::Concat => {
                let (a, b) = (v(g, "a")?, v(g, "b")?);
                g.concat(&[a, b], 1)?
            }
            OpCase::Broadcast => {
                let (a, b, c) = (v(g, "a")?, v(g, "b")?, v(g, "c")?);
                let s = g.add(&a, &b)?;
                let m = g.mul(&s, &c)?;
                g.sub(&m, &b)?
            }
            OpCase::Sigmoid => {
                let a = v(g, "a")?;
                g.sigmoid(&a)?
            }
            OpCase::Relu6 => {
                let a = v(g, "a")?;
                g.relu6(&a)?
            }
            OpCase::Reductions => {
                let a = v(g, "a")?;
                let s = g.sum_axis(&a, 1)?;
                let m = g.max_axis(&a, 2)?;
                g.add(&s, &m)?
            }
            OpCase::Conv => {
                let (x, w, b) = (v(g, "x")?, v(g, "w")?, v(g, "b")?);
                g.conv2d(&x, &w, Some(&b), Conv2dGeometry::strided(3, 2))?
            }
            OpCase::GroupedConv => {
                let (x, w) = (v(g, "x")?, v(g, "w")?);
                g.conv2d(&x, &w, None, Conv2dGeometry::same(5).with_groups(2))?
            }
            OpCase::BatchNorm => {
                let (x, ga, be) = (v(g, "x")?, v(g, "gamma")?, v(g, "beta")?);
                let st = self.stats.as_ref().expect("stats");
                let stats = BatchNormStats {
                    mean: st.mean.cast(),
                    var: st.var.cast(),
                    eps: st.eps,
                };
                g.batchnorm(&x, &ga, &be, &stats)?
            }
            OpCase::Bilinear => {
                let x = v(g, "x")?;
                g.bilinear_resize(&x, 7, 11)?
            }
            OpCase::AvgPool => {
                let x = v(g, "x")?;
                g.avg_pool2d(&x, 2, 2)?
            }
            OpCase::CrossEntropy => {
                let a = v(g, "a")?;
                return Ok(g.cross_entropy(&a, self.labels.as_ref().expect("labels"))?.0);
            }
            OpCase::Kl => {
                let (a, b) = (v(g, "a")?, v(g, "b")?);
                return g.kl_divergence(&a, &b);
            }
            OpCase::Cosine => {
                let (a, b) = (v(g, "a")?, v(g, "b")?);
                return g.neg_cosine(&a, &b);
            }
        };
        weighted_sum(g, &y, self.seed)
    }
}

/// A module forward on a stored input, reduced by a fixed weighting.
struct ModuleProgram<M> {
    module: M,
    seed: u64,
    plain_sum: bool,
}

pub const INPUT: &str = "input";

trait Forward {
    fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var>;
}

impl Forward for SeaAttention {
    fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        SeaAttention::forward(self, r, x)
    }
}

impl Forward for SeaFormerLayer {
    fn forward<T: Scalar, G: Graph<T>>(&self, r: &mut Run<'_, T, G>, x: &G::Var) -> Result<G::Var> {
        SeaFormerLayer::forward(self, r, x)
    }
}

impl<M: Forward> ScalarProgram for ModuleProgram<M> {
    fn run<T: Scalar, G: Graph<T>>(&self, g: &mut G, p: &ParamStore<T>) -> Result<G::Var> {
        let mut r = Run::new(g, p);
        let x = r.p(INPUT)?;
        let y = self.module.forward(&mut r, &x)?;
        if self.plain_sum {
            g.sum_all(&y)
        } else {
            weighted_sum(g, &y, self.seed)
        }
    }
}

/// SEA block configuration exercised by seed `seed`: adaptive masks on
/// most seeds, every enhance input and mode in rotation.
pub fn sea_case(seed: u64) -> (AttentionConfig, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = [8, 16][rng.gen_range(0..2)];
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    let mut cfg = AttentionConfig::with_heads(c, heads, c / heads);
    cfg.squeeze_mode = [SqueezeMode::Adaptive, SqueezeMode::Adaptive, SqueezeMode::MeanPool, SqueezeMode::MaxPool]
        [(seed % 4) as usize];
    cfg.enhance_input = [EnhanceInput::ConcatQkv, EnhanceInput::ConvX, EnhanceInput::UpconvX][(seed % 3) as usize];
    cfg.enhance_mode = [EnhanceMode::Mul, EnhanceMode::Add][(seed % 2) as usize];
    let (h, w) = (rng.gen_range(3..=8), rng.gen_range(3..=8));
    cfg.pos_embed_len = rng.gen_range(2..=h.min(w));
    (cfg, h, w)
}

/// Random map with per-row and per-column channel offsets, so squeezed
/// sequences vary along the axis instead of averaging to a constant.
pub fn structured_input(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = uniform(&mut rng, &[c, h], -1.0, 1.0);
    let cols = uniform(&mut rng, &[c, w], -1.0, 1.0);
    let noise = uniform(&mut rng, &[c, h, w], -0.5, 0.5);
    Tensor::from_fn(vec![c, h, w], |i| {
        rows.get(&[i[0], i[1]]) + cols.get(&[i[0], i[2]]) + noise.get(i)
    })
    .expect("valid shape")
}

fn sea_check(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (cfg, h, w) = sea_case(seed);
    let mut init = Init::new(seed);
    let c = cfg.channels;
    let block = SeaAttention::new(&mut init, "sea", cfg, true)?;
    init.tensor(INPUT, Role::Table, structured_input(c, h, w, seed ^ 0x1a))?;
    let mut params = init.finish();
    randomize_bn(&mut params, seed ^ 0xb0);
    let prog = ModuleProgram {
        module: block,
        seed,
        plain_sum: false,
    };
    gradcheck(&prog, &params, opts)
}

/// One layer at `C = 8, H = W = 6`, differentiating the plain output sum.
fn layer_check(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut cfg = AttentionConfig::with_heads(8, 2, 4);
    cfg.squeeze_mode = if seed % 2 == 0 { SqueezeMode::Adaptive } else { SqueezeMode::MeanPool };
    let mut init = Init::new(seed);
    let layer = SeaFormerLayer::new(&mut init, "layer", cfg, 2)?;
    init.tensor(INPUT, Role::Table, structured_input(8, 6, 6, seed ^ 0x1b))?;
    let mut params = init.finish();
    randomize_bn(&mut params, seed ^ 0xb1);
    let prog = ModuleProgram {
        module: layer,
        seed,
        plain_sum: true,
    };
    gradcheck(&prog, &params, opts)
}

fn opts_for(scope: Scope, seed: u64, wrong_vjp: Option<&'static str>) -> GradCheckOptions {
    GradCheckOptions {
        threshold: scope.threshold(),
        seed,
        wrong_vjp,
        ..Default::default()
    }
}

/// Runs `count` consecutive seeds of one scope starting at `seed`.
/// Distillation checks live with the distillation module and are
/// dispatched from there.
pub fn run_scope(scope: Scope, seed: u64, count: usize, wrong_vjp: Option<&'static str>) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    for s in seed..seed + count as u64 {
        let opts = opts_for(scope, s, wrong_vjp);
        match scope {
            Scope::Ops => {
                for case in OP_CASES {
                    let (prog, params) = OpProgram::build(case, s)?;
                    out.push(SuiteResult {
                        check: format!("{case:?}").to_lowercase(),
                        seed: s,
                        report: gradcheck(&prog, &params, &opts)?,
                    });
                }
            }
            Scope::Sea => out.push(SuiteResult {
                check: "sea_block".into(),
                seed: s,
                report: sea_check(s, &opts)?,
            }),
            Scope::Layer => out.push(SuiteResult {
                check: "seaformer_layer".into(),
                seed: s,
                report: layer_check(s, &opts)?,
            }),
            Scope::Distill => out.push(SuiteResult {
                check: "distill_total".into(),
                seed: s,
                report: crate::distill::gradcheck_total(s, &opts)?,
            }),
        }
    }
    Ok(out)
}
