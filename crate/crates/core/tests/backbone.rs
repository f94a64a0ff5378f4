use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seaformer_core::backbone::{
    ClsModel, FusionBlock, FusionMode, LayerEntry, ModelOptions, SegModel, StageLayer, VariantName, VariantSpec,
};
use seaformer_core::nn::{Init, Run};
use seaformer_core::ops::{conv2d, mul, scale, sigmoid, Conv2dGeometry};
use seaformer_core::{Eager, Error, Graph, ShapeGraph, Tensor};

fn rand_t(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape.to_vec(), lo, hi, &mut rng).unwrap()
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want
}

#[test]
fn table_entries_are_read_exactly() {
    let t = VariantSpec::preset(VariantName::T);
    assert_eq!(t.stage_channels(4), 128);
    assert_eq!(t.stage_channels(5), 160);
    assert_eq!(t.stages[4][0], LayerEntry::Mb { kernel: 5, expansion: 3.0, out_channels: 128, stride: 2 });
    assert_eq!(t.stages[5][0], LayerEntry::Mb { kernel: 3, expansion: 6.0, out_channels: 160, stride: 2 });
    let l = VariantSpec::preset(VariantName::L);
    assert!(l.stages[3].contains(&LayerEntry::Sea { layers: 3, heads: 8 }));
    for n in [VariantName::T, VariantName::S, VariantName::B] {
        let s = VariantSpec::preset(n);
        assert!(!s.stages[3].iter().any(|e| matches!(e, LayerEntry::Sea { .. })));
        assert!(s.stages[4].iter().any(|e| matches!(e, LayerEntry::Sea { .. })));
        assert!(s.stages[5].iter().any(|e| matches!(e, LayerEntry::Sea { .. })));
    }
}

#[test]
fn build_is_deterministic() {
    let a = SegModel::<f64>::preset(VariantName::T, 150, 7).unwrap();
    let b = SegModel::<f64>::preset(VariantName::T, 150, 7).unwrap();
    let c = SegModel::<f64>::preset(VariantName::T, 150, 8).unwrap();
    assert_eq!(a.params.checksum(), b.params.checksum());
    assert_ne!(a.params.checksum(), c.params.checksum());
    let x = rand_t(&[3, 64, 64], -3.0, 3.0, 1);
    let ya = a.forward(&x).unwrap();
    let yb = b.forward(&x).unwrap();
    assert_eq!(ya.data(), yb.data());
    assert_eq!(ya.checksum(), yb.checksum());
}

#[test]
fn stem_and_context_scales() {
    let m = SegModel::<f64>::preset(VariantName::T, 150, 0).unwrap();
    let mut g = Eager;
    let mut r = Run::new(&mut g, &m.params);
    let x_s = m.net.backbone.stem(&mut r, &Tensor::full(vec![3, 64, 64], 0.5).unwrap()).unwrap();
    assert_eq!(x_s.shape(), &[32, 8, 8]);
    assert!(x_s.all_finite());
    let ctx = m.net.backbone.context(&mut r, &x_s).unwrap();
    let dims: Vec<Vec<usize>> = ctx.iter().map(|t| t.shape().to_vec()).collect();
    assert_eq!(dims, [vec![64, 4, 4], vec![128, 2, 2], vec![160, 1, 1]]);

    let mut sg = ShapeGraph::<f64>::new();
    let mut r = Run::new(&mut sg, &m.params);
    assert_eq!(m.net.backbone.stem(&mut r, &vec![3, 512, 512]).unwrap(), vec![32, 64, 64]);
}

#[test]
fn removing_attention_layers_changes_the_output() {
    let m = SegModel::<f64>::preset(VariantName::T, 150, 3).unwrap();
    let x = rand_t(&[3, 64, 64], -1.0, 1.0, 4);
    let full = m.forward_all(&x).unwrap();
    let mut net = m.net.clone();
    for stage in &mut net.backbone.stages {
        stage.retain(|l| !matches!(l, StageLayer::Sea(_)));
    }
    let mut g = Eager;
    let ablated = net.forward(&mut Run::new(&mut g, &m.params), &x).unwrap();
    assert_eq!(ablated.stages[5].shape(), full.stages[5].shape());
    assert!(max_diff(&ablated.stages[5], &full.stages[5]) > 1e-6);
    assert!(max_diff(&ablated.logits, &full.logits) > 1e-6);
}

fn fusion(mode: FusionMode, seed: u64) -> (FusionBlock, seaformer_core::nn::ParamStore<f64>) {
    let mut init = Init::new(seed);
    let f = FusionBlock::new(&mut init, "fuse", 4, 6, 5, mode).unwrap();
    (f, init.finish())
}

fn run_fusion(f: &FusionBlock, p: &seaformer_core::nn::ParamStore<f64>, s: &Tensor<f64>, c: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Eager;
    f.forward(&mut Run::new(&mut g, p), s, c).unwrap()
}

fn pointwise(p: &seaformer_core::nn::ParamStore<f64>, name: &str, x: &Tensor<f64>) -> Tensor<f64> {
    // Default BN statistics are the identity up to 1/sqrt(1 + eps).
    let y = conv2d(x, p.get(&format!("{name}.conv.weight")).unwrap(), None, Conv2dGeometry::same(1)).unwrap();
    scale(&y, 1.0 / (1.0f64 + 1e-5).sqrt())
}

#[test]
fn fusion_block_examples() {
    let s = rand_t(&[4, 8, 8], -1.0, 1.0, 1);
    let c = rand_t(&[6, 2, 2], -1.0, 1.0, 2);
    let (f, mut p) = fusion(FusionMode::SigmoidMul, 3);
    p.zero_matching("fuse.context", ".weight");
    let y = run_fusion(&f, &p, &s, &c);
    assert_eq!(y.shape(), &[5, 8, 8]);
    let half = scale(&pointwise(&p, "fuse.spatial", &s), 0.5);
    assert!(max_diff(&y, &half) <= 1e-15);

    let (f, p) = fusion(FusionMode::SigmoidMul, 4);
    let same = rand_t(&[6, 8, 8], -1.0, 1.0, 5);
    let y = run_fusion(&f, &p, &s, &same);
    let want = mul(&pointwise(&p, "fuse.spatial", &s), &sigmoid(&pointwise(&p, "fuse.context", &same))).unwrap();
    assert!(max_diff(&y, &want) <= 1e-14);

    let mut g = Eager;
    let err = f.forward(&mut Run::new(&mut g, &p), &c, &same);
    assert!(matches!(err, Err(Error::Dimension { .. })));
}

#[test]
fn fusion_modes_differ_pairwise() {
    let s = rand_t(&[4, 8, 8], -1.0, 1.0, 6);
    let c = rand_t(&[6, 4, 4], -1.0, 1.0, 7);
    let outs: Vec<Tensor<f64>> = FusionMode::ALL
        .iter()
        .map(|&m| {
            let (f, p) = fusion(m, 9);
            run_fusion(&f, &p, &s, &c)
        })
        .collect();
    for i in 0..outs.len() {
        for j in i + 1..outs.len() {
            assert!(max_diff(&outs[i], &outs[j]) > 1e-6, "{:?} vs {:?}", FusionMode::ALL[i], FusionMode::ALL[j]);
        }
    }
}

#[test]
fn segmentation_contract() {
    let m = SegModel::<f64>::preset(VariantName::T, 150, 0).unwrap();
    let y = m.forward(&rand_t(&[3, 64, 64], -1.0, 1.0, 0)).unwrap();
    assert_eq!(y.shape(), &[150, 8, 8]);
    assert!(matches!(m.forward(&rand_t(&[3, 64, 96], 0.0, 1.0, 0)), Err(Error::Input(_))));
    assert!(matches!(m.forward(&rand_t(&[1, 64, 64], 0.0, 1.0, 0)), Err(Error::Input(_))));
    assert!(SegModel::<f64>::preset(VariantName::T, 0, 0).is_err());
}

#[test]
fn segmentation_numbers_match_the_published_totals() {
    let b = SegModel::<f32>::preset(VariantName::B, 150, 0).unwrap();
    assert!(within(b.param_count() as f64, 8.6e6, 0.15), "{}", b.param_count());
    let t = SegModel::<f32>::preset(VariantName::T, 150, 0).unwrap();
    let macs = t.macs(512, 512).unwrap() as f64;
    assert!(within(macs, 0.6e9, 0.25), "{macs}");
}

#[test]
fn classification_contract() {
    let mut m = ClsModel::<f32>::preset(VariantName::T, 1000, 0).unwrap();
    let x = Tensor::<f32>::full(vec![3, 224, 224], 0.3).unwrap();
    assert_eq!(m.forward(&x).unwrap().shape(), &[1000]);
    assert_eq!(m.params.zero_matching("cls.linear", ""), 2);
    assert!(m.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));

    let s = ClsModel::<f32>::preset(VariantName::S, 1000, 0).unwrap();
    assert!(within(s.param_count() as f64, 4.1e6, 0.15), "{}", s.param_count());
}

#[test]
fn grouped_macs_sum_to_the_total() {
    let seg = SegModel::<f32>::preset(VariantName::S, 150, 0).unwrap();
    let groups = seg.macs_by_group(256, 256).unwrap();
    assert_eq!(groups.len(), 9);
    assert_eq!(groups.values().sum::<u64>(), seg.macs(256, 256).unwrap());
    let cls = ClsModel::<f32>::preset(VariantName::S, 1000, 0).unwrap();
    let groups = cls.macs_by_group(224, 224).unwrap();
    assert_eq!(groups.values().sum::<u64>(), cls.macs(224, 224).unwrap());
    assert!(groups["cls"] > 0);
}

#[test]
fn counts_grow_with_the_variant() {
    let seg: Vec<usize> = VariantName::ALL
        .iter()
        .map(|&n| SegModel::<f32>::preset(n, 150, 0).unwrap().param_count())
        .collect();
    let cls: Vec<usize> = VariantName::ALL
        .iter()
        .map(|&n| ClsModel::<f32>::preset(n, 1000, 0).unwrap().param_count())
        .collect();
    assert!(seg.windows(2).all(|w| w[0] < w[1]), "{seg:?}");
    assert!(cls.windows(2).all(|w| w[0] < w[1]), "{cls:?}");
}

#[test]
fn forwards_stay_finite_over_many_seeds() {
    for seed in 0..50 {
        let m = SegModel::<f64>::preset(VariantName::T, 150, seed).unwrap();
        let y = m.forward(&rand_t(&[3, 64, 64], -3.0, 3.0, 1000 + seed)).unwrap();
        assert!(y.all_finite(), "seed {seed}");
    }
}

#[test]
fn options_change_the_attention_layers() {
    let spec = VariantSpec::preset(VariantName::T);
    let mut opts = ModelOptions::default();
    opts.ffn_ratio = [2, 2, 2];
    let narrow = SegModel::<f32>::build(&spec, 150, opts, 0).unwrap();
    let wide = SegModel::<f32>::preset(VariantName::T, 150, 0).unwrap();
    assert!(narrow.param_count() < wide.param_count());
    let json = serde_json::to_string(&opts).unwrap();
    assert_eq!(serde_json::from_str::<ModelOptions>(&json).unwrap(), opts);
    assert!(serde_json::from_str::<ModelOptions>(r#"{"bogus": 1}"#).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stage_scales_follow_the_table(h in 1usize..9, w in 1usize..9, v in 0usize..4) {
        let name = VariantName::ALL[v];
        let m = SegModel::<f32>::preset(name, 19, 0).unwrap();
        let mut g = ShapeGraph::<f32>::new();
        let mut r = Run::new(&mut g, &m.params);
        let out = m.net.forward(&mut r, &vec![3, 64 * h, 64 * w]).unwrap();
        for (i, s) in out.stages.iter().enumerate() {
            let f = 2usize << i;
            prop_assert_eq!(&s[1..], &[64 * h / f, 64 * w / f][..]);
            prop_assert_eq!(s[0], m.net.backbone.spec.stage_channels(i));
        }
        prop_assert_eq!(r.g.shape(&out.logits), vec![19, 8 * h, 8 * w]);
    }
}
