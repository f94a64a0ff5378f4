use serde::{Deserialize, Serialize};

use crate::cost::measure_macs;
use crate::error::{Error, Result};
use crate::graph::{Eager, ShapeGraph};
use crate::nn::{Init, ParamStore, Run};
use crate::scalar::Scalar;
use crate::sea::{AttentionConfig, BaselineAttention, BaselineKind, SeaAttention};
use crate::tensor::Tensor;

use super::timing::time_kernel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub label: String,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub macs: u64,
    /// Zero when timing was not requested.
    pub wall_ns: u64,
}

impl CostRow {
    pub fn area(&self) -> usize {
        self.h * self.w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

/// Ordinary least squares of `ln(macs)` on `ln(h·w)`.
pub fn fit_scaling(rows: &[CostRow]) -> Result<ScalingFit> {
    if rows.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "scaling fit needs at least 3 rows, got {}",
            rows.len()
        )));
    }
    let mut areas: Vec<usize> = rows.iter().map(CostRow::area).collect();
    areas.sort_unstable();
    areas.dedup();
    if areas.len() < 3 {
        return Err(Error::InsufficientData("scaling fit needs at least 3 distinct areas".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.macs == 0 || r.area() == 0) {
        return Err(Error::InsufficientData(format!("row `{}` has zero area or MACs", r.label)));
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.area() as f64).ln(), (r.macs as f64).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(ScalingFit {
        slope,
        intercept,
        residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub fit: Option<ScalingFit>,
}

impl CostReport {
    pub fn new(rows: Vec<CostRow>) -> Self {
        let fit = fit_scaling(&rows).ok();
        CostReport { rows, fit }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,h,w,c,macs,wall_ns\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{},{}\n", r.label, r.h, r.w, r.c, r.macs, r.wall_ns));
        }
        s
    }

    /// Fit summary plus rows, timing kept under its own key.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| serde_json::json!({"label": r.label, "h": r.h, "w": r.w, "c": r.c, "macs": r.macs}))
            .collect();
        let wall: Vec<u64> = self.rows.iter().map(|r| r.wall_ns).collect();
        serde_json::json!({
            "rows": rows,
            "fit": self.fit,
            "timing": {"wall_ns": wall},
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnKind {
    Sea,
    Global,
    Axial,
    Window(usize),
}

impl AttnKind {
    pub fn label(self) -> String {
        match self {
            AttnKind::Sea => "sea".into(),
            AttnKind::Global => "global".into(),
            AttnKind::Axial => "axial".into(),
            AttnKind::Window(m) => format!("window{m}"),
        }
    }
}

enum Block {
    Sea(SeaAttention),
    Base(BaselineAttention),
}

impl Block {
    fn build<T: Scalar>(kind: AttnKind, channels: usize, heads: usize, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut init = Init::new(seed);
        let b = match kind {
            AttnKind::Sea => {
                let cfg = AttentionConfig::with_heads(channels, heads, channels / heads);
                Block::Sea(SeaAttention::new(&mut init, "attn", cfg, true)?)
            }
            AttnKind::Global => Block::Base(BaselineAttention::new(&mut init, "attn", BaselineKind::Global, channels, heads)?),
            AttnKind::Axial => Block::Base(BaselineAttention::new(&mut init, "attn", BaselineKind::Axial, channels, heads)?),
            AttnKind::Window(m) => {
                Block::Base(BaselineAttention::new(&mut init, "attn", BaselineKind::Window(m), channels, heads)?)
            }
        };
        Ok((b, init.finish()))
    }

    fn key_value(&self) -> (usize, usize) {
        match self {
            Block::Sea(s) => (s.cfg.key_dim, s.cfg.value_dim),
            Block::Base(b) => (b.channels / 2, b.channels),
        }
    }

    fn proj(&self) -> &crate::nn::ConvBn {
        match self {
            Block::Sea(s) => &s.proj,
            Block::Base(b) => &b.proj,
        }
    }

    fn attend<T: Scalar, G: crate::graph::Graph<T>>(
        &self,
        r: &mut Run<'_, T, G>,
        x: &G::Var,
        qkv: (&G::Var, &G::Var, &G::Var),
    ) -> Result<G::Var> {
        match self {
            Block::Sea(s) => s.forward_qkv(r, x, qkv),
            Block::Base(b) => b.forward_qkv(r, qkv),
        }
    }
}

/// Attention-path MACs at each square size: everything between the q/k/v
/// projections and the output projection. Those 1×1 convolutions are common
/// to every kind and linear in area, so they are left out of the count. With `time_iters > 0` the same path is also timed in
/// 32-bit on real data; sizes whose dense attention matrix would exceed
/// `2^28` elements are left untimed.
pub fn attention_cost(
    kind: AttnKind,
    sizes: &[usize],
    channels: usize,
    heads: usize,
    seed: u64,
    time_iters: usize,
) -> Result<CostReport> {
    let (block, params) = Block::build::<f64>(kind, channels, heads, seed)?;
    let (ck, cv) = block.key_value();
    let mut rows = Vec::with_capacity(sizes.len());
    for &s in sizes {
        let mut g = ShapeGraph::<f64>::new();
        let (x, q, v) = (vec![channels, s, s], vec![ck, s, s], vec![cv, s, s]);
        let (res, macs) = measure_macs(|| {
            let mut r = Run::new(&mut g, &params);
            block.attend(&mut r, &x, (&q, &q, &v))
        });
        res?;
        let y = vec![cv, s, s];
        let (res, proj) = measure_macs(|| {
            let mut r = Run::new(&mut g, &params);
            block.proj().forward(&mut r, &y)
        });
        res?;
        let macs = macs - proj;
        let wall_ns = if time_iters > 0 && dense_elems(kind, heads, s) <= 1 << 28 {
            time_block(kind, channels, heads, seed, s, time_iters)?
        } else {
            0
        };
        rows.push(CostRow {
            label: kind.label(),
            h: s,
            w: s,
            c: channels,
            macs,
            wall_ns,
        });
    }
    Ok(CostReport::new(rows))
}

fn dense_elems(kind: AttnKind, heads: usize, s: usize) -> usize {
    match kind {
        AttnKind::Global => heads * s.pow(4),
        _ => heads * s * s * s,
    }
}

fn time_block(kind: AttnKind, channels: usize, heads: usize, seed: u64, s: usize, iters: usize) -> Result<u64> {
    let (block, params) = Block::build::<f32>(kind, channels, heads, seed)?;
    let (ck, cv) = block.key_value();
    let mut init = Init::<f32>::new(seed ^ 0x5eed);
    let x = Tensor::<f32>::uniform(vec![channels, s, s], -1.0, 1.0, init.rng())?;
    let q = Tensor::<f32>::uniform(vec![ck, s, s], -1.0, 1.0, init.rng())?;
    let k = Tensor::<f32>::uniform(vec![ck, s, s], -1.0, 1.0, init.rng())?;
    let v = Tensor::<f32>::uniform(vec![cv, s, s], -1.0, 1.0, init.rng())?;
    let mut err = None;
    let stats = time_kernel(
        || {
            let mut g = Eager;
            let mut r = Run::new(&mut g, &params);
            if let Err(e) = block.attend(&mut r, &x, (&q, &k, &v)) {
                err = Some(e);
            }
        },
        1,
        iters.max(3),
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(stats.min_ns),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(f: impl Fn(f64) -> f64) -> Vec<CostRow> {
        [4usize, 8, 16, 32]
            .iter()
            .map(|&s| CostRow {
                label: "x".into(),
                h: s,
                w: s,
                c: 1,
                macs: f((s * s) as f64) as u64,
                wall_ns: 0,
            })
            .collect()
    }

    #[test]
    fn synthetic_slopes() {
        let lin = fit_scaling(&rows(|a| 7.0 * a)).unwrap();
        assert!((lin.slope - 1.0).abs() < 1e-9);
        let quad = fit_scaling(&rows(|a| a * a)).unwrap();
        assert!((quad.slope - 2.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_rows() {
        let r = rows(|a| a);
        assert!(matches!(fit_scaling(&r[..2]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn csv_header() {
        let rep = CostReport::new(rows(|a| a));
        assert!(rep.to_csv().starts_with("label,h,w,c,macs,wall_ns\n"));
        assert_eq!(rep.to_csv().lines().count(), 5);
    }
}
