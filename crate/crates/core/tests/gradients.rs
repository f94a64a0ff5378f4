//! Gradient checks on a handful of seeds; the full 20-seed sweep runs in the
//! CLI acceptance suite.

use seaformer_core::analysis::{fd_step, numerical_gradient, rel_error};
use seaformer_core::analysis::suites::{run_scope, Scope};
use seaformer_core::Tensor;

fn worst(scope: Scope, seed: u64, count: usize, wrong: Option<&'static str>) -> (bool, f64) {
    let results = run_scope(scope, seed, count, wrong).unwrap();
    assert!(!results.is_empty());
    let max = results.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
    (results.iter().all(|r| r.report.passed), max)
}

#[test]
fn op_vjps_match_finite_differences() {
    let (ok, max) = worst(Scope::Ops, 0, 3, None);
    assert!(ok, "worst relative error {max:e}");
}

#[test]
fn sea_block_gradients_match() {
    let (ok, max) = worst(Scope::Sea, 3, 2, None);
    assert!(ok, "worst relative error {max:e}");
}

#[test]
fn layer_gradients_match() {
    let (ok, max) = worst(Scope::Layer, 5, 1, None);
    assert!(ok, "worst relative error {max:e}");
}

#[test]
fn broken_vjps_are_caught() {
    for op in ["softmax", "matmul"] {
        let (ok, max) = worst(Scope::Sea, 1, 1, Some(op));
        assert!(!ok, "{op}: sign-flipped VJP passed with error {max:e}");
        assert!(max > 1e-2);
    }
    let (ok, _) = worst(Scope::Ops, 0, 1, Some("conv2d"));
    assert!(!ok);
}

#[test]
fn oracle_recovers_a_closed_form_derivative() {
    // d/dx Σ exp(x_i)·x_i = exp(x)(1 + x)
    let x = Tensor::from_f64(vec![3], &[-0.7, 0.0, 1.3]).unwrap();
    let g = numerical_gradient(
        |t: &Tensor<f64>| Ok(t.data().iter().map(|v| v.exp() * v).sum::<f64>()),
        &x,
        None,
    )
    .unwrap();
    for (i, &v) in x.data().iter().enumerate() {
        let n = g.data()[i];
        assert!(rel_error(v.exp() * (1.0 + v), n) < 1e-7, "{i}: {n}");
    }
    assert_eq!(fd_step(0.0), 1e-6);
    assert_eq!(fd_step(-3.0), 4e-6);
}
