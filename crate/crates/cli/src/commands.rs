use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::json;

use seaformer_core::analysis::oracles::run_oracles;
use seaformer_core::analysis::suites::{run_scope, Scope};
use seaformer_core::analysis::{attention_cost, AttnKind};
use seaformer_core::backbone::{param_groups, ClsModel, ModelOptions, SegModel, Task, VariantSpec};
use seaformer_core::distill::{DistillConfig, DistillLossReport, Distiller, LossToggles, UpsampleKind};
use seaformer_core::io::{read_stn, write_stn};
use seaformer_core::ops::LabelMap;
use seaformer_core::{Error, Result, Tensor};

use crate::{Cli, Command, ModelCmd, Outcome};

/// Parses a snake_case enum name through its serde representation.
fn parse_enum<E: DeserializeOwned>(what: &str, s: &str) -> Result<E> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Argument(format!("unknown {what} `{s}`")))
}

fn ok(report: String) -> Result<Outcome> {
    Ok(Outcome { report, passed: true })
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable report");
    s.push('\n');
    s
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Params(m) => params(cli, m),
        Command::Flops { model, height, width } => flops(cli, model, *height, *width),
        Command::BenchScaling {
            attn,
            sizes,
            channels,
            heads,
            time_iters,
        } => bench_scaling(cli, attn, sizes, *channels, *heads, *time_iters),
        Command::Gradcheck {
            scope,
            count,
            inject_wrong_vjp,
        } => gradcheck(cli, scope, *count, inject_wrong_vjp.as_deref()),
        Command::Forward { model, input, logits } => forward(cli, model, input, logits.as_deref()),
        Command::DistillDemo {
            variant,
            hw,
            classes,
            losses,
            upsample,
            temperature,
        } => distill_demo(cli, *variant, *hw, *classes, losses, upsample, *temperature),
        Command::OracleCheck => oracle_check(cli),
    }
}

struct ModelChoice {
    spec: VariantSpec,
    task: Task,
    classes: usize,
    options: ModelOptions,
}

enum Model {
    Seg(SegModel<f32>),
    Cls(ClsModel<f32>),
}

impl ModelChoice {
    fn from_args(m: &ModelCmd) -> Result<Self> {
        let spec = match &m.variant_file {
            Some(path) => VariantSpec::load(path)?,
            None => VariantSpec::preset(m.variant),
        };
        let task: Task = parse_enum("task", &m.task)?;
        let mut options = ModelOptions::default();
        if let Some(s) = &m.squeeze_mode {
            options.squeeze_mode = parse_enum("squeeze mode", s)?;
        }
        if let Some(s) = &m.enhance_input {
            options.enhance_input = parse_enum("enhance input", s)?;
        }
        if let Some(s) = &m.enhance_mode {
            options.enhance_mode = parse_enum("enhance mode", s)?;
        }
        if let Some(s) = &m.fusion_mode {
            options.fusion_mode = parse_enum("fusion mode", s)?;
        }
        let classes = m.classes.unwrap_or(match task {
            Task::Seg => 150,
            Task::Cls => 1000,
        });
        Ok(ModelChoice {
            spec,
            task,
            classes,
            options,
        })
    }

    fn build(&self, seed: u64) -> Result<Model> {
        Ok(match self.task {
            Task::Seg => Model::Seg(SegModel::build(&self.spec, self.classes, self.options, seed)?),
            Task::Cls => Model::Cls(ClsModel::build(&self.spec, self.classes, self.options, seed)?),
        })
    }

    fn header(&self) -> serde_json::Value {
        json!({
            "variant": self.spec.name,
            "task": self.task,
            "classes": self.classes,
            "options": self.options,
        })
    }
}

fn task_label(t: Task) -> &'static str {
    match t {
        Task::Seg => "seg",
        Task::Cls => "cls",
    }
}

fn group_table(title: &str, unit: &str, choice: &ModelChoice, groups: &BTreeMap<String, u64>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{title}: variant {}, task {}, {} classes",
        choice.spec.name,
        task_label(choice.task),
        choice.classes
    );
    for (k, v) in groups {
        let _ = writeln!(s, "  {k:<10} {v:>14}");
    }
    let total: u64 = groups.values().sum();
    let _ = writeln!(s, "  {:<10} {total:>14} {unit}", "total");
    s
}

fn params(cli: &Cli, m: &ModelCmd) -> Result<Outcome> {
    let choice = ModelChoice::from_args(m)?;
    let store = match choice.build(cli.seed)? {
        Model::Seg(m) => m.params,
        Model::Cls(m) => m.params,
    };
    let groups: BTreeMap<String, u64> = param_groups(&store).into_iter().map(|(k, v)| (k, v as u64)).collect();
    if cli.json {
        let mut v = choice.header();
        v["groups"] = json!(groups);
        v["total"] = json!(store.total());
        return ok(pretty(&v));
    }
    ok(group_table("parameters", "params", &choice, &groups))
}

fn flops(cli: &Cli, m: &ModelCmd, h: usize, w: usize) -> Result<Outcome> {
    let choice = ModelChoice::from_args(m)?;
    let groups = match choice.build(cli.seed)? {
        Model::Seg(m) => m.macs_by_group(h, w)?,
        Model::Cls(m) => m.macs_by_group(h, w)?,
    };
    if cli.json {
        let mut v = choice.header();
        v["height"] = json!(h);
        v["width"] = json!(w);
        v["groups"] = json!(groups);
        v["total"] = json!(groups.values().sum::<u64>());
        return ok(pretty(&v));
    }
    let mut s = group_table("MACs", "MACs", &choice, &groups);
    let _ = writeln!(s, "  input {h}x{w}");
    ok(s)
}

fn parse_attn(s: &str) -> Result<AttnKind> {
    match s {
        "sea" => Ok(AttnKind::Sea),
        "global" => Ok(AttnKind::Global),
        "axial" => Ok(AttnKind::Axial),
        _ => s
            .strip_prefix("window")
            .map(|m| m.trim_start_matches([':', '=']))
            .and_then(|m| m.parse::<usize>().ok())
            .filter(|&m| m > 0)
            .map(AttnKind::Window)
            .ok_or_else(|| Error::Argument(format!("unknown attention `{s}` (sea, global, axial, window<m>)"))),
    }
}

fn bench_scaling(cli: &Cli, attn: &str, sizes: &[usize], channels: usize, heads: usize, iters: usize) -> Result<Outcome> {
    let kind = parse_attn(attn)?;
    if sizes.len() < 3 {
        return Err(Error::Argument(format!("bench-scaling needs at least 3 sizes, got {}", sizes.len())));
    }
    if iters > 0 && iters < 3 {
        return Err(Error::Argument("--time-iters must be 0 or at least 3".into()));
    }
    let report = attention_cost(kind, sizes, channels, heads, cli.seed, iters)?;
    if cli.json {
        return ok(pretty(&report.to_json()));
    }
    let mut s = report.to_csv();
    if let Some(f) = report.fit {
        let _ = writeln!(s, "# slope={:.4} intercept={:.4} residual={:.2e}", f.slope, f.intercept, f.residual);
    }
    ok(s)
}

fn scopes(s: &str) -> Result<Vec<Scope>> {
    if s == "all" {
        return Ok(vec![Scope::Ops, Scope::Sea, Scope::Layer, Scope::Distill]);
    }
    Ok(vec![parse_enum("scope", s)?])
}

fn gradcheck(cli: &Cli, scope: &str, count: usize, wrong: Option<&str>) -> Result<Outcome> {
    let scopes = scopes(scope)?;
    if count == 0 {
        return Err(Error::Argument("--count must be positive".into()));
    }
    let wrong: Option<&'static str> = wrong.map(|w| &*Box::leak(w.to_string().into_boxed_str()));
    let mut rows = Vec::new();
    for sc in scopes {
        for r in run_scope(sc, cli.seed, count, wrong)? {
            let worst = r
                .report
                .entries
                .iter()
                .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
                .map(|e| e.name.clone())
                .unwrap_or_default();
            rows.push(json!({
                "scope": sc,
                "check": r.check,
                "seed": r.seed,
                "max_rel_error": r.report.max_rel_error,
                "threshold": r.report.threshold,
                "worst_tensor": worst,
                "passed": r.report.passed,
            }));
        }
    }
    let passed = rows.iter().all(|r| r["passed"] == true);
    let n_ok = rows.iter().filter(|r| r["passed"] == true).count();
    let report = if cli.json {
        pretty(&json!({"checks": rows, "passed": passed}))
    } else {
        let mut s = format!("{:<8} {:<16} {:>5} {:>12} {:>9}  result\n", "scope", "check", "seed", "max_rel_err", "threshold");
        for r in &rows {
            let _ = writeln!(
                s,
                "{:<8} {:<16} {:>5} {:>12.3e} {:>9.0e}  {}",
                r["scope"].as_str().unwrap_or(""),
                r["check"].as_str().unwrap_or(""),
                r["seed"],
                r["max_rel_error"].as_f64().unwrap_or(f64::NAN),
                r["threshold"].as_f64().unwrap_or(f64::NAN),
                if r["passed"] == true { "PASS" } else { "FAIL" }
            );
        }
        let _ = writeln!(s, "{n_ok}/{} checks passed", rows.len());
        s
    };
    Ok(Outcome { report, passed })
}

fn forward(cli: &Cli, m: &ModelCmd, input: &std::path::Path, logits: Option<&std::path::Path>) -> Result<Outcome> {
    let choice = ModelChoice::from_args(m)?;
    if !input.is_file() {
        return Err(Error::Argument(format!("input `{}` is not a file", input.display())));
    }
    let x: Tensor<f32> = read_stn(input)?;
    if !matches!(x.shape(), [3, _, _]) {
        return Err(Error::Input(format!("expected a [3, H, W] tensor, got {:?}", x.shape())));
    }
    let y = match choice.build(cli.seed)? {
        Model::Seg(m) => m.forward(&x)?,
        Model::Cls(m) => m.forward(&x)?,
    };
    if let Some(path) = logits {
        write_stn(path, &y)?;
    }
    if cli.json {
        let mut v = choice.header();
        v["input_shape"] = json!(x.shape());
        v["output_shape"] = json!(y.shape());
        v["checksum"] = json!(format!("{:016x}", y.checksum()));
        return ok(pretty(&v));
    }
    ok(format!(
        "output shape {:?}\nchecksum {:016x}\n",
        y.shape(),
        y.checksum()
    ))
}

fn report_json(r: &DistillLossReport) -> serde_json::Value {
    serde_json::to_value(r).expect("serializable report")
}

fn distill_demo(
    cli: &Cli,
    variant: seaformer_core::backbone::VariantName,
    hw: usize,
    classes: usize,
    losses: &str,
    upsample: &str,
    temperature: f64,
) -> Result<Outcome> {
    if hw == 0 || hw % 128 != 0 {
        return Err(Error::Argument(format!("--hw must be a positive multiple of 128, got {hw}")));
    }
    let config = DistillConfig {
        upsample: upsample.parse::<UpsampleKind>()?,
        losses: LossToggles::parse(losses)?,
        temperature,
        same_resolution: false,
    };
    let teacher = SegModel::<f64>::preset(variant, classes, cli.seed)?;
    let student = SegModel::<f64>::preset(variant, classes, cli.seed + 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed + 2);
    let x = Tensor::<f64>::uniform(vec![3, hw, hw], -1.0, 1.0, &mut rng)?;
    let side = hw / 8;
    let labels = LabelMap::new(side, side, (0..side * side).map(|_| rng.gen_range(0..classes as u32)).collect())?;

    let d = Distiller::new(teacher.clone(), student, config, cli.seed + 3)?;
    let report = d.step(&x, &labels)?;
    let own = DistillConfig {
        same_resolution: true,
        ..Default::default()
    };
    let self_report = Distiller::new(teacher.clone(), teacher, own, cli.seed + 3)?.step(&x, &labels)?;

    let parts_sum = report.l_cls + report.l_cross + report.l_feat + report.l_out;
    let finite = [report.l_cls, report.l_cross, report.l_feat, report.l_out, report.total]
        .iter()
        .all(|v| v.is_finite());
    let checks = json!({
        "total_is_sum": report.total == parts_sum,
        "finite": finite,
        "self_feat_is_minus_one": (self_report.l_feat + 1.0).abs() <= 1e-9,
        "self_out_is_zero": self_report.l_out.abs() <= 1e-9,
    });
    let passed = checks.as_object().expect("object").values().all(|v| v == true);
    let v = json!({
        "variant": variant,
        "hw": hw,
        "student_hw": hw / 2,
        "classes": classes,
        "seed": cli.seed,
        "config": config,
        "aligner_params": d.aligner_param_count(),
        "report": report_json(&report),
        "self_distillation": report_json(&self_report),
        "checks": checks,
    });
    Ok(Outcome {
        report: pretty(&v),
        passed,
    })
}

fn oracle_check(cli: &Cli) -> Result<Outcome> {
    let results = run_oracles(cli.seed)?;
    let passed = results.iter().all(|r| r.passed);
    let report = if cli.json {
        pretty(&json!({"oracles": results, "passed": passed}))
    } else {
        let mut s = String::new();
        for r in &results {
            let tol = if r.tolerance == 0.0 {
                "bitwise".to_string()
            } else {
                format!("{:.0e}", r.tolerance)
            };
            let _ = writeln!(
                s,
                "{:<32} max|diff| {:.3e}  tol {:<8} cases {:>3}  {}",
                r.name,
                r.max_abs_diff,
                tol,
                r.cases,
                if r.passed { "PASS" } else { "FAIL" }
            );
        }
        s
    };
    Ok(Outcome { report, passed })
}
