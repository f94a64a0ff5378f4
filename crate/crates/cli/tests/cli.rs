use std::path::Path;
use std::process::{Command, Output};

use seaformer_core::io::write_stn;
use seaformer_core::Tensor;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seaformer")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(args: &[&str]) -> Value {
    let mut a = args.to_vec();
    a.push("--json");
    let o = run(&a);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want
}

#[test]
fn params_report_totals() {
    let v = json(&["params", "--variant", "B", "--task", "seg"]);
    let total = v["total"].as_f64().unwrap();
    assert!(within(total, 8.6e6, 0.15), "{total}");
    let groups: f64 = v["groups"].as_object().unwrap().values().map(|g| g.as_f64().unwrap()).sum();
    assert_eq!(groups, total);
    let v = json(&["params", "--variant", "T", "--task", "cls"]);
    assert!(within(v["total"].as_f64().unwrap(), 1.9e6, 0.15));
}

#[test]
fn unknown_variant_is_a_usage_error() {
    let o = run(&["params", "--variant", "XL"]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("T, S, B, L"), "{err}");
    assert_eq!(code(&run(&["params", "--task", "det"])), 2);
    assert_eq!(code(&run(&["params", "--fusion-mode", "concat"])), 2);
}

#[test]
fn flops_groups_sum_to_total() {
    let v = json(&["flops", "--variant", "T", "--height", "512", "--width", "512"]);
    let total = v["total"].as_f64().unwrap();
    assert!(within(total, 0.6e9, 0.25), "{total}");
    assert_eq!(v["groups"].as_object().unwrap().len(), 9);
}

#[test]
fn scaling_slopes() {
    for (attn, lo, hi) in [("sea", 0.9, 1.1), ("global", 1.85, 2.15), ("axial", 1.4, 1.6), ("window4", 0.9, 1.1)] {
        let v = json(&["bench-scaling", "--attn", attn, "--sizes", "16,32,64,128", "--channels", "64"]);
        let slope = v["fit"]["slope"].as_f64().unwrap();
        assert!((lo..=hi).contains(&slope), "{attn}: {slope}");
        assert_eq!(v["rows"].as_array().unwrap().len(), 4);
    }
    let o = run(&["bench-scaling", "--attn", "sea"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.starts_with("label,h,w,c,macs,wall_ns\n"));
    assert!(text.contains("# slope="));
    assert_eq!(code(&run(&["bench-scaling", "--sizes", "16,32"])), 2);
    assert_eq!(code(&run(&["bench-scaling", "--attn", "dense"])), 2);
}

#[test]
fn gradcheck_command() {
    let v = json(&["gradcheck", "--scope", "sea", "--seed", "7"]);
    assert_eq!(v["passed"], true);
    assert!(v["checks"][0]["max_rel_error"].as_f64().unwrap() < 1e-5);

    let v = json(&["gradcheck", "--scope", "ops"]);
    let names: Vec<&str> = v["checks"].as_array().unwrap().iter().map(|c| c["check"].as_str().unwrap()).collect();
    for op in ["matmul", "softmax", "conv", "batchnorm"] {
        assert!(names.contains(&op), "{names:?}");
    }

    let o = run(&["gradcheck", "--scope", "sea", "--inject-wrong-vjp", "softmax"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
    assert_eq!(code(&run(&["gradcheck", "--scope", "everything"])), 2);
}

fn write_input(dir: &Path) -> String {
    let x = Tensor::<f32>::from_fn(vec![3, 64, 64], |i| ((i[0] * 7 + i[1] * 3 + i[2]) % 11) as f32 / 11.0 - 0.5).unwrap();
    let path = dir.join("x.stn");
    write_stn(&path, &x).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn forward_writes_logits() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let out = dir.path().join("y.stn");
    let o = run(&["forward", "--variant", "T", "--task", "seg", "--input", &input, "--logits", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let y: Tensor<f32> = seaformer_core::io::read_stn(&out).unwrap();
    assert_eq!(y.shape(), &[150, 8, 8]);
    let again = run(&["forward", "--variant", "T", "--input", &input]);
    assert_eq!(o.stdout, again.stdout);
    assert!(stdout(&o).contains("checksum"));

    let bytes = std::fs::read(&input).unwrap();
    let cut = dir.path().join("cut.stn");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let o = run(&["forward", "--input", cut.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte"));
    assert_eq!(code(&run(&["forward", "--input", "/definitely/missing.stn"])), 2);
}

#[test]
fn distill_demo_reports() {
    let o = run(&["distill-demo", "--hw", "128", "--classes", "150"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let r = &v["report"];
    let parts: Vec<f64> = ["l_cls", "l_cross", "l_feat", "l_out"].iter().map(|k| r[k].as_f64().unwrap()).collect();
    assert!(parts.iter().all(|p| p.is_finite()));
    assert_eq!(r["total"].as_f64().unwrap(), parts.iter().sum::<f64>());
    assert!((v["self_distillation"]["l_feat"].as_f64().unwrap() + 1.0).abs() <= 1e-9);
    assert!(v["self_distillation"]["l_out"].as_f64().unwrap().abs() <= 1e-9);

    let o = run(&["distill-demo", "--losses", "cls,out"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["report"]["l_feat"], 0.0);
    assert_eq!(v["report"]["l_cross"], 0.0);
    assert!(v["report"]["l_out"].as_f64().unwrap() > 0.0);

    assert_eq!(code(&run(&["distill-demo", "--hw", "100"])), 2);
    assert_eq!(code(&run(&["distill-demo", "--losses", "cls,style"])), 2);
    assert_eq!(code(&run(&["distill-demo", "--upsample", "nearest"])), 2);
}

#[test]
fn oracle_check_passes() {
    let o = run(&["oracle-check"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).matches("PASS").count(), 4);
}

#[test]
fn config_file_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"variant": "B", "task": "cls", "json": true}"#).unwrap();
    let o = run(&["params", "--config", cfg.to_str().unwrap(), "--variant", "S"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["variant"], "S");
    assert_eq!(v["task"], "cls");

    std::fs::write(&cfg, r#"{"sizes": [16, 32, 64], "attn": "global"}"#).unwrap();
    let o = run(&["bench-scaling", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("global,")).count(), 3);

    std::fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
    assert_eq!(code(&run(&["params", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn out_flag_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.txt");
    let o = run(&["params", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    assert!(std::fs::read_to_string(&path).unwrap().contains("total"));
}
