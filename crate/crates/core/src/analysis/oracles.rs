//! Closed-form equivalences between attention variants, checked on seeded
//! random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::graph::Eager;
use crate::nn::{Init, ParamStore, Run};
use crate::sea::axial::{normalize_mask, squeeze_axis, Axis};
use crate::sea::{
    baseline_attend, pos_table_names, AttentionConfig, BaselineKind, EnhanceInput, EnhanceMode, SeaAttention,
    SqueezeMode,
};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize)]
pub struct OracleResult {
    pub name: &'static str,
    pub max_abs_diff: f64,
    /// 0 means bitwise equality is required.
    pub tolerance: f64,
    pub cases: usize,
    pub passed: bool,
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng).expect("valid shape")
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn result(name: &'static str, diffs: &[f64], tolerance: f64, bitwise_ok: bool) -> OracleResult {
    let max = diffs.iter().cloned().fold(0.0, f64::max);
    OracleResult {
        name,
        max_abs_diff: max,
        tolerance,
        cases: diffs.len(),
        passed: bitwise_ok && if tolerance == 0.0 { max == 0.0 } else { max <= tolerance },
    }
}

fn block(cfg: AttentionConfig, positional: bool, seed: u64) -> Result<(SeaAttention, ParamStore<f64>)> {
    let mut init = Init::new(seed);
    let b = SeaAttention::new(&mut init, "sea", cfg, positional)?;
    Ok((b, init.finish()))
}

fn config(c: usize, heads: usize, squeeze: SqueezeMode) -> AttentionConfig {
    let mut cfg = AttentionConfig::with_heads(c, heads, c / heads);
    cfg.squeeze_mode = squeeze;
    cfg.enhance_mode = EnhanceMode::Mul;
    cfg.enhance_input = EnhanceInput::ConcatQkv;
    cfg
}

/// Softmax-normalized masks from all-zero logits weight every position
/// equally, so the adaptive squeeze is the mean pool.
pub fn adaptive_uniform_is_mean_pool(seed: u64) -> Result<OracleResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diffs = Vec::new();
    for _ in 0..10 {
        let (c, h, w) = (rng.gen_range(1..6), rng.gen_range(1..12), rng.gen_range(1..12));
        let x = rand_t(&mut rng, &[c, h, w]);
        let logits = Tensor::zeros(vec![1, h, w])?;
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let m = normalize_mask(&mut Eager, &logits, axis)?;
            let a = squeeze_axis(&mut Eager, &x, axis, SqueezeMode::Adaptive, Some(&m))?;
            let p = squeeze_axis(&mut Eager, &x, axis, SqueezeMode::MeanPool, None)?;
            diffs.push(max_diff(&a, &p));
        }
    }
    Ok(result("adaptive_uniform_is_mean_pool", &diffs, 1e-9, true))
}

/// One window covering the whole map is global attention.
pub fn full_window_is_global(seed: u64) -> Result<OracleResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diffs = Vec::new();
    for (s, heads) in [(4usize, 1usize), (6, 2), (8, 4)] {
        let q = rand_t(&mut rng, &[8, s, s]);
        let k = rand_t(&mut rng, &[8, s, s]);
        let v = rand_t(&mut rng, &[16, s, s]);
        let g = baseline_attend(&mut Eager, (&q, &k, &v), heads, BaselineKind::Global)?;
        let w = baseline_attend(&mut Eager, (&q, &k, &v), heads, BaselineKind::Window(s))?;
        diffs.push(max_diff(&g, &w));
    }
    Ok(result("full_window_is_global", &diffs, 1e-10, true))
}

/// Zero position tables make the positional block identical, bit for bit,
/// to the same block without position terms.
pub fn zero_tables_drop_positions(seed: u64) -> Result<OracleResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diffs = Vec::new();
    let mut bitwise = true;
    for (i, squeeze) in [SqueezeMode::MeanPool, SqueezeMode::MaxPool, SqueezeMode::Adaptive].into_iter().enumerate() {
        let (b, mut p) = block(config(16, 4, squeeze), true, seed.wrapping_add(i as u64))?;
        for t in pos_table_names("sea") {
            let shape = p.get(&t)?.shape().to_vec();
            p.set(&t, Tensor::zeros(shape)?)?;
        }
        let plain = SeaAttention {
            positional: false,
            ..b.clone()
        };
        for (h, w) in [(5, 7), (16, 16), (20, 3)] {
            let x = rand_t(&mut rng, &[16, h, w]);
            let mut g = Eager;
            let with = b.forward(&mut Run::new(&mut g, &p), &x)?;
            let without = plain.forward(&mut Run::new(&mut g, &p), &x)?;
            bitwise &= with.data() == without.data();
            diffs.push(max_diff(&with, &without));
        }
    }
    Ok(result("zero_tables_drop_positions", &diffs, 0.0, bitwise))
}

/// On a 1×1 map both axial paths attend to their single position and the
/// expansion copies back `v`, so the semantic branch is `2·v`.
pub fn single_position_semantic(seed: u64) -> Result<OracleResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diffs = Vec::new();
    for (i, squeeze) in [SqueezeMode::MeanPool, SqueezeMode::MaxPool, SqueezeMode::Adaptive].into_iter().enumerate() {
        let (b, mut p) = block(config(8, 2, squeeze), true, seed.wrapping_add(10 + i as u64))?;
        if squeeze == SqueezeMode::Adaptive {
            // Unit restoration masks: zero conv, BN shift of one.
            for m in ["sea.expand_h", "sea.expand_v"] {
                p.zero_matching(m, ".conv.weight");
                p.set(&format!("{m}.bn.beta"), Tensor::ones(vec![1])?)?;
            }
        }
        let x = rand_t(&mut rng, &[8, 1, 1]);
        let mut g = Eager;
        let mut r = Run::new(&mut g, &p);
        let (q, k, v) = b.project_qkv(&mut r, &x)?;
        let s = b.semantic(&mut r, &x, (&q, &k, &v))?;
        diffs.push(max_diff(&s, &v.map(|t| 2.0 * t)));
    }
    Ok(result("single_position_semantic_is_2v", &diffs, 1e-12, true))
}

pub fn run_oracles(seed: u64) -> Result<Vec<OracleResult>> {
    Ok(vec![
        adaptive_uniform_is_mean_pool(seed)?,
        full_window_is_global(seed)?,
        zero_tables_drop_positions(seed)?,
        single_position_semantic(seed)?,
    ])
}
