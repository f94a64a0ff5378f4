use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seaformer_core::cost::count_macs;
use seaformer_core::io::{decode_stn, encode_stn, read_stn, write_stn};
use seaformer_core::ops::{add, inverse_permutation, matmul, mul, permute, relu6, sigmoid, softmax};
use seaformer_core::{Error, Graph, Tape, Tensor};

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng).unwrap()
}

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), v).unwrap()
}

/// Triple loop that also counts its multiplications.
fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> (Tensor<f64>, u64) {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    let mut muls = 0;
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.get(&[i, p]) * b.get(&[p, j]);
                muls += 1;
            }
        }
    }
    (Tensor::new(vec![m, n], out).unwrap(), muls)
}

fn max_rel(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300))
        .fold(0.0, f64::max)
}

#[test]
fn matmul_identity_cases() {
    let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let i2 = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    assert_eq!(matmul(&a, &i2).unwrap(), a);
    let col = t(&[2, 1], &[5.0, 7.0]);
    assert_eq!(matmul(&i2, &col).unwrap(), col);
}

#[test]
fn matmul_matches_triple_loop_and_counts_exactly() {
    let a = rand_t(&[3, 4], 1);
    let b = rand_t(&[4, 2], 2);
    let (want, muls) = naive_matmul(&a, &b);
    let mut got = None;
    let macs = count_macs(|| got = Some(matmul(&a, &b).unwrap()));
    let got = got.unwrap();
    for (x, y) in got.data().iter().zip(want.data()) {
        assert!((x - y).abs() <= 1e-12);
    }
    assert_eq!(macs, muls);
    assert_eq!(count_macs(|| drop(matmul(&rand_t(&[3, 4], 0), &rand_t(&[4, 5], 0)))), 60);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let e = matmul(&rand_t(&[2, 3], 0), &rand_t(&[2, 3], 1)).unwrap_err();
    let msg = e.to_string();
    assert!(matches!(e, Error::Dimension { .. }));
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn softmax_examples() {
    let s = softmax(&t(&[3], &[0.0, 0.0, 0.0]), 0).unwrap();
    for v in s.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let s = softmax(&t(&[2], &[1000.0, 0.0]), 0).unwrap();
    assert_eq!(s.data()[0], 1.0);
    assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-300);
    let x = rand_t(&[2, 5], 3);
    let s = softmax(&x, 1).unwrap();
    for r in 0..2 {
        let z: f64 = (0..5).map(|j| x.get(&[r, j]).exp()).sum();
        for j in 0..5 {
            assert!((s.get(&[r, j]) - x.get(&[r, j]).exp() / z).abs() <= 1e-12);
        }
    }
}

#[test]
fn permute_examples() {
    let x = rand_t(&[2, 3, 4], 4);
    assert_eq!(permute(&x, &[0, 2, 1]).unwrap().shape(), &[2, 4, 3]);
    assert_eq!(permute(&x, &[0, 1, 2]).unwrap(), x);
    let there = permute(&x, &[1, 2, 0]).unwrap();
    assert_eq!(permute(&there, &[2, 0, 1]).unwrap(), x);
    assert!(matches!(permute(&x, &[0, 0, 1]), Err(Error::Argument(_))));
}

#[test]
fn elementwise_examples() {
    assert_eq!(sigmoid(&t(&[1], &[0.0])).data(), &[0.5]);
    assert_eq!(relu6(&t(&[2], &[7.3, -1.0])).data(), &[6.0, 0.0]);
    let a = rand_t(&[2, 3], 5);
    let b = rand_t(&[1, 3], 6);
    let s = add(&a, &b).unwrap();
    for i in 0..2 {
        for j in 0..3 {
            assert_eq!(s.get(&[i, j]), a.get(&[i, j]) + b.get(&[0, j]));
        }
    }
    assert!(matches!(add(&a, &rand_t(&[2, 2], 0)), Err(Error::Dimension { .. })));
    assert!(matches!(mul(&a, &rand_t(&[3, 3], 0)), Err(Error::Dimension { .. })));
}

#[test]
fn backward_examples() {
    let mut g = Tape::<f64>::new();
    let x = g.param("x", &rand_t(&[2, 2], 1));
    let y = g.sum_all(&x).unwrap();
    let grads = g.backward(y, None).unwrap();
    assert_eq!(grads["x"], Tensor::ones(vec![2, 2]).unwrap());

    let mut g = Tape::<f64>::new();
    let x = g.param("x", &t(&[3], &[1.0, 2.0, 3.0]));
    let sq = g.mul(&x, &x).unwrap();
    let y = g.sum_all(&sq).unwrap();
    assert_eq!(g.backward(y, None).unwrap()["x"].data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn unused_leaves_get_zero_gradients() {
    let mut g = Tape::<f64>::new();
    let x = g.param("x", &rand_t(&[3], 1));
    let _unused = g.param("u", &rand_t(&[2, 2], 2));
    let y = g.sum_all(&x).unwrap();
    let grads = g.backward(y, None).unwrap();
    assert_eq!(grads["u"], Tensor::zeros(vec![2, 2]).unwrap());
    assert!(Tape::<f64>::new().is_empty());
}

#[test]
fn backward_accepts_a_matching_seed() {
    let mut g = Tape::<f64>::new();
    let a = g.param("a", &rand_t(&[2, 3], 1));
    let b = g.param("b", &rand_t(&[3, 2], 2));
    let c = g.matmul(&a, &b).unwrap();
    let seed = rand_t(&[2, 2], 3);
    let grads = g.backward(c, Some(&seed)).unwrap();
    // dA = dC·Bᵀ, dB = Aᵀ·dC.
    let bt = permute(&rand_t(&[3, 2], 2), &[1, 0]).unwrap();
    let at = permute(&rand_t(&[2, 3], 1), &[1, 0]).unwrap();
    assert!(max_rel(&grads["a"], &matmul(&seed, &bt).unwrap()) < 1e-15);
    assert!(max_rel(&grads["b"], &matmul(&at, &seed).unwrap()) < 1e-15);
    assert!(g.backward(c, Some(&rand_t(&[3, 3], 0))).is_err());
}

#[test]
fn tape_is_topologically_ordered_and_cotangents_match_inputs() {
    let mut g = Tape::<f64>::new();
    let x = g.param("x", &rand_t(&[2, 3, 4], 1));
    let w = g.param("w", &rand_t(&[1, 3, 1], 2));
    let y = g.mul(&x, &w).unwrap();
    let y = g.permute(&y, &[2, 0, 1]).unwrap();
    let y = g.softmax(&y, 2).unwrap();
    let s = g.sum_all(&y).unwrap();
    for i in 0..g.len() {
        let v = g.var(i).unwrap();
        assert!(g.inputs(v).iter().all(|&p| p < i));
    }
    let grads = g.backward(s, None).unwrap();
    assert_eq!(grads["x"].shape(), &[2, 3, 4]);
    assert_eq!(grads["w"].shape(), &[1, 3, 1]);
}

#[test]
fn stn_layout_and_round_trip() {
    let x = t(&[2, 3], &[1.0, -2.0, 3.5, 0.0, 5.25, -6.0]);
    let bytes = encode_stn(&x);
    assert_eq!(&bytes[..4], b"STNS");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
    assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1.0);
    assert_eq!(bytes.len(), 16 + 6 * 4);
    assert_eq!(decode_stn::<f64>(&bytes).unwrap(), x);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.stn");
    write_stn(&path, &x).unwrap();
    assert_eq!(read_stn::<f64>(&path).unwrap(), x);
    let e = decode_stn::<f64>(&bytes[..bytes.len() - 3]).unwrap_err();
    assert!(matches!(e, Error::Format { .. }), "{e}");
}

#[test]
fn tensors_reject_empty_dims() {
    assert!(Tensor::<f64>::zeros(vec![2, 0]).is_err());
    assert!(Tensor::<f64>::zeros(Vec::new()).is_err());
    assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
}

#[test]
fn precision_is_a_type_property() {
    let x32 = Tensor::<f32>::from_f64(vec![2], &[0.1, 0.2]).unwrap();
    let x64: Tensor<f64> = x32.cast();
    assert_eq!(x64.data()[0], 0.1f32 as f64);
    let s32 = sigmoid(&x32);
    assert!((s32.data()[0] as f64 - sigmoid(&x64).data()[0]).abs() < 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_slices_sum_to_one(rows in 1usize..5, cols in 1usize..9, mag in 0.0f64..1000.0, seed in 0u64..1000) {
        let x = rand_t(&[rows, cols], seed).map(|v| v * mag);
        for axis in 0..2 {
            let s = softmax(&x, axis).unwrap();
            let n = if axis == 0 { cols } else { rows };
            for i in 0..n {
                let sum: f64 = if axis == 0 {
                    (0..rows).map(|r| s.get(&[r, i])).sum()
                } else {
                    (0..cols).map(|c| s.get(&[i, c])).sum()
                };
                prop_assert!((sum - 1.0).abs() <= 1e-9);
                prop_assert!(s.all_finite());
            }
        }
    }

    #[test]
    fn permute_then_inverse_is_identity(dims in proptest::collection::vec(1usize..4, 1..5), seed in 0u64..1000) {
        let x = rand_t(&dims, seed);
        let mut order: Vec<usize> = (0..dims.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let y = permute(&x, &order).unwrap();
        for (i, &o) in order.iter().enumerate() {
            prop_assert_eq!(y.shape()[i], dims[o]);
        }
        prop_assert_eq!(permute(&y, &inverse_permutation(&order)).unwrap(), x);
    }

    #[test]
    fn matmul_is_associative(m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6, seed in 0u64..1000) {
        let a = rand_t(&[m, k], seed);
        let b = rand_t(&[k, n], seed + 1);
        let c = rand_t(&[n, p], seed + 2);
        let l = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let r = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        let scale = l.max_abs().max(1.0);
        for (x, y) in l.data().iter().zip(r.data()) {
            prop_assert!((x - y).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn outputs_stay_finite(seed in 0u64..1000, mag in 0.0f64..50.0) {
        let x = rand_t(&[3, 4], seed).map(|v| v * mag);
        prop_assert!(sigmoid(&x).all_finite());
        prop_assert!(relu6(&x).all_finite());
        prop_assert!(softmax(&x, 1).unwrap().all_finite());
    }
}
