use diffcore::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn zero_mlp_outputs_zero_for_every_activation() {
    for act in Activation::ALL {
        let mut s = ParamStore::new();
        let shape = MlpShape { input: 4, hidden: 6, hidden_layers: 2, output: 3 };
        let mlp = MlpParams::new(&mut s, "m", shape, act, None, &mut rng(1)).unwrap();
        for id in s.ids().collect::<Vec<_>>() {
            s.get_mut(id).data_mut().fill(0.0);
        }
        let x = Tensor::randn(5, 4, 1.0, &mut rng(2));
        let y = mlp_forward(&mut Eager, &s, &mlp, &x).unwrap();
        assert_eq!(y.shape(), &[5, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0), "{act:?}");
    }
}

#[test]
fn identity_linear_mlp_is_identity() {
    let mut s = ParamStore::new();
    let layer = Linear::new(&mut s, "id", 4, 4, &mut rng(3));
    *s.get_mut(layer.weight) = Tensor::identity(4);
    let mlp = MlpParams::from_layers(vec![layer], Activation::Relu, None).unwrap();
    let x = Tensor::randn(6, 4, 1.0, &mut rng(4));
    let y = mlp_forward(&mut Eager, &s, &mlp, &x).unwrap();
    assert_eq!(y, x);
}

#[test]
fn mlp_rejects_wrong_input_width() {
    let mut s = ParamStore::new();
    let shape = MlpShape { input: 4, hidden: 6, hidden_layers: 1, output: 2 };
    let mlp = MlpParams::new(&mut s, "m", shape, Activation::Relu, None, &mut rng(5)).unwrap();
    let x = Tensor::zeros(3, 5);
    assert!(matches!(mlp_forward(&mut Eager, &s, &mlp, &x), Err(DiffError::Shape { .. })));
}

#[test]
fn linear_loss_gradient_is_input() {
    let mut s = ParamStore::new();
    let w = s.add("w", Tensor::row(vec![0.3, -1.2, 2.0]));
    let x = Tensor::row(vec![1.5, -0.25, 4.0]);
    let mut tape = Tape::new();
    let wv = tape.param(&s, w);
    let xv = tape.constant(x.clone());
    let p = tape.mul(&wv, &xv).unwrap();
    let l = tape.sum(&p).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.param(&s, w).unwrap().data(), x.data());
}

#[test]
fn constant_loss_has_zero_gradients() {
    let mut s = ParamStore::new();
    let w = s.add("w", Tensor::randn(3, 3, 1.0, &mut rng(6)));
    let mut tape = Tape::new();
    let wv = tape.param(&s, w);
    let zero = tape.scale(&wv, 0.0).unwrap();
    let c = tape.constant(Tensor::full(3, 3, 2.5));
    let l0 = tape.add(&zero, &c).unwrap();
    let l = tape.sum(&l0).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.for_store(&s)[0].data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_error_paths() {
    let mut s = ParamStore::new();
    let w = s.add("w", Tensor::randn(2, 2, 1.0, &mut rng(7)));

    let mut tape = Tape::new();
    let wv = tape.param(&s, w);
    assert!(matches!(tape.backward(wv), Err(DiffError::NonScalarLoss(_))));

    let l = tape.sum(&wv).unwrap();
    tape.backward(l).unwrap();
    assert!(matches!(tape.backward(l), Err(DiffError::BackwardTwice)));

    let mut other = Tape::new();
    assert!(matches!(other.backward(l), Err(DiffError::DetachedGraph)));

    tape.reset();
    let wv = tape.param(&s, w);
    let l = tape.sum(&wv).unwrap();
    assert!(tape.backward(l).is_ok());
}

#[test]
fn nan_guard_names_the_op() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::row(vec![1.0, f64::MAX]));
    let err = tape.scale(&a, 10.0).unwrap_err();
    assert!(matches!(err, DiffError::NonFinite { op: "scale" }));
}

#[test]
fn group_norm_constant_input_gives_beta() {
    let x = Tensor::full(3, 4, 7.5);
    let gamma = Tensor::row(vec![2.0, -1.0, 0.5, 3.0]);
    let beta = Tensor::row(vec![0.1, 0.2, 0.3, 0.4]);
    let y = Eager.group_norm(&x, &gamma, &beta, 2, 1e-5).unwrap();
    for r in 0..3 {
        assert_eq!(y.row_slice(r), beta.data());
    }
}

#[test]
fn group_norm_single_group_standardizes() {
    let x = Tensor::randn(1, 16, 3.0, &mut rng(8)).map(|v| v + 5.0);
    let y = Eager.group_norm(&x, &Tensor::full(1, 16, 1.0), &Tensor::zeros(1, 16), 1, 0.0).unwrap();
    let mean = y.sum() / 16.0;
    let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-12);
}

#[test]
fn group_norm_rejects_indivisible_groups() {
    let x = Tensor::zeros(2, 6);
    let r = Eager.group_norm(&x, &Tensor::full(1, 6, 1.0), &Tensor::zeros(1, 6), 4, 1e-5);
    assert!(matches!(r, Err(DiffError::InvalidArgument(_))));
}

#[test]
fn training_is_deterministic_for_a_seed() {
    fn run(seed: u64) -> Vec<f64> {
        let mut r = rng(seed);
        let mut s = ParamStore::new();
        let shape = MlpShape { input: 3, hidden: 8, hidden_layers: 2, output: 1 };
        let mlp = MlpParams::new(&mut s, "m", shape, Activation::LeakyRelu, Some(2), &mut r).unwrap();
        let x = Tensor::randn(16, 3, 1.0, &mut r);
        let y = Tensor::randn(16, 1, 1.0, &mut r);
        let mut state = AdamState::new(&s);
        let cfg = AdamConfig::with_lr(1e-2);
        let mut losses = Vec::new();
        for _ in 0..20 {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let out = mlp_forward(&mut tape, &s, &mlp, &xv).unwrap();
            let w = Tensor::full(16, 1, 1.0 / 16.0);
            let l = tape.weighted_loss(&out, &y, &w, &Tensor::zeros(16, 1)).unwrap();
            losses.push(tape.value(&l).item());
            let g = tape.backward(l).unwrap().for_store(&s);
            adam_step(&mut s, &g, &mut state, &cfg).unwrap();
        }
        losses.extend(s.flat());
        losses
    }
    let a = run(11);
    let b = run(11);
    assert_eq!(a, b);
    assert!(a[19] < a[0], "loss should fall: {} -> {}", a[0], a[19]);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut s = ParamStore::new();
    s.add("a", Tensor::randn(3, 4, 1.0, &mut rng(9)));
    s.add("b", Tensor::new(vec![2, 2, 2], (0..8).map(|i| i as f64 * 0.1 + f64::EPSILON).collect()).unwrap());
    s.add("scalar", Tensor::scalar(-0.0));
    let meta = serde_json::json!({"schema": 3, "norm": {"p_min": 151.25, "p_max": 290.5}});
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    save_checkpoint(&path, &s, &meta).unwrap();
    let (back, meta2) = load_checkpoint(&path).unwrap();
    assert_eq!(back, s);
    assert_eq!(meta2, meta);
    for ((_, _, a), (_, _, b)) in s.iter().zip(back.iter()) {
        let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }
}

#[test]
fn checkpoint_rejects_garbage() {
    let bytes = b"NOTACKPT\x01\x00\x00\x00".to_vec();
    assert!(matches!(read_checkpoint(&bytes[..]), Err(DiffError::Format(_))));
}

proptest! {
    #[test]
    fn sum_scatter_preserves_column_totals(rows in 1usize..20, n_out in 1usize..6, seed in 0u64..1000) {
        let mut r = rng(seed);
        let src = Tensor::randn(rows, 3, 1.0, &mut r);
        let idx: Vec<usize> = (0..rows).map(|i| (i * 7 + seed as usize) % n_out).collect();
        let idx: Index = idx.into();
        let out = Eager.scatter_rows(&src, &idx, n_out, Reduce::Sum).unwrap();
        for c in 0..3 {
            let a: f64 = (0..rows).map(|i| src.get(i, c)).sum();
            let b: f64 = (0..n_out).map(|i| out.get(i, c)).sum();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_scatter_lies_between_min_and_max(rows in 1usize..20, seed in 0u64..1000) {
        let mut r = rng(seed);
        let src = Tensor::randn(rows, 2, 1.0, &mut r);
        let idx: Index = vec![0usize; rows].into();
        let mean = Eager.scatter_rows(&src, &idx, 1, Reduce::Mean).unwrap();
        let max = Eager.scatter_rows(&src, &idx, 1, Reduce::Max).unwrap();
        for c in 0..2 {
            let lo = (0..rows).map(|i| src.get(i, c)).fold(f64::INFINITY, f64::min);
            prop_assert!(mean.get(0, c) >= lo - 1e-12 && mean.get(0, c) <= max.get(0, c) + 1e-12);
        }
    }
}

#[test]
fn fused_eager_ops_match_composed_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x = Tensor::randn(37, 9, 1.0, &mut rng);
    let w = Tensor::randn(9, 12, 1.0, &mut rng);
    let b = Tensor::randn(1, 12, 1.0, &mut rng);
    let ex = &mut Eager;
    let fused = ex.linear(&x, &w, &b).unwrap();
    let composed = {
        let h = ex.matmul(&x, &w).unwrap();
        ex.add_bias(&h, &b).unwrap()
    };
    assert_eq!(fused, composed);
    for act in Activation::ALL {
        assert_eq!(ex.activation_owned(fused.clone(), act).unwrap(), ex.activation(&fused, act).unwrap());
    }
    let g = Tensor::randn(1, 12, 1.0, &mut rng);
    let value = ex.group_norm(&fused, &g, &b, 3, 1e-5).unwrap();
    let (cached, _) = diffcore::kernels::group_norm(&fused, &g, &b, 3, 1e-5).unwrap();
    assert_eq!(value, cached);
}
