use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn eval1(input: Tensor<f64>, f: impl Fn(&mut Tape<f64>, Var) -> Result<Var, NumError>) -> Result<Tensor<f64>, NumError> {
    let mut t = Tape::new();
    let x = t.constant(input);
    let y = f(&mut t, x)?;
    Ok(t.value(y).clone())
}

#[test]
fn matmul_identity_annihilator_and_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = Tensor::new(vec![3, 4], (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let mut t = Tape::new();
    let (i3, xv) = (t.constant(Tensor::identity(3)), t.constant(x.clone()));
    let ix = t.matmul(i3, xv).unwrap();
    assert_eq!(t.value(ix), &x);
    let z = t.constant(Tensor::zeros(&[4, 2]));
    let xz = t.matmul(xv, z).unwrap();
    assert!(t.value(xz).data().iter().all(|&v| v == 0.0));

    let b = Tensor::new(vec![4, 2], (0..8).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let bv = t.constant(b.clone());
    let xb = t.matmul(xv, bv).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let mut want = 0.0f64;
            for p in 0..4 {
                want += x.at(i, p) * b.at(p, j);
            }
            assert!((t.value(xb).at(i, j) - want).abs() < 1e-12);
        }
    }
    assert!(matches!(t.matmul(xv, xv), Err(NumError::Shape { .. })));
}

#[test]
fn softmax_examples() {
    let eq = eval1(Tensor::full(&[1, 4], 0.7), |t, x| t.softmax_rows(x)).unwrap();
    assert!(eq.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    let two = eval1(Tensor::matrix(1, 2, vec![0.0, 3f64.ln()]).unwrap(), |t, x| t.softmax_rows(x)).unwrap();
    assert!((two.data()[0] - 0.25).abs() < 1e-12 && (two.data()[1] - 0.75).abs() < 1e-12);
    let big = eval1(Tensor::matrix(1, 2, vec![1000.0, 0.0]).unwrap(), |t, x| t.softmax_rows(x)).unwrap();
    assert!(big.all_finite());
    assert!((big.data()[0] - 1.0).abs() < 1e-12 && big.data()[1] < 1e-300);
    let nan = eval1(Tensor::matrix(1, 2, vec![f64::NAN, 0.0]).unwrap(), |t, x| t.softmax_rows(x));
    assert!(matches!(nan, Err(NumError::NonFinite { .. })));
}

fn plain_layer_norm(x: Tensor<f64>) -> Tensor<f64> {
    let d = x.shape()[1];
    let mut t = Tape::new();
    let xv = t.constant(x);
    let g = t.constant(Tensor::full(&[d], 1.0));
    let b = t.constant(Tensor::zeros(&[d]));
    let y = t.layer_norm(xv, g, b).unwrap();
    t.value(y).clone()
}

#[test]
fn layer_norm_examples() {
    let c = plain_layer_norm(Tensor::full(&[1, 5], 3.2));
    assert!(c.data().iter().all(|&v| v.abs() < 1e-9));
    let y = plain_layer_norm(Tensor::matrix(1, 2, vec![1.0, 3.0]).unwrap());
    assert!((y.data()[0] + 1.0).abs() < 1e-5 && (y.data()[1] - 1.0).abs() < 1e-5);
    let one = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
    assert!(eval1(one, |t, x| {
        let g = t.constant(Tensor::vector(vec![1.0]));
        t.layer_norm(x, g, g)
    })
    .is_err());
}

#[test]
fn gelu_and_lookup_examples() {
    let g = eval1(Tensor::vector(vec![0.0]), |t, x| Ok(t.gelu(x))).unwrap();
    assert_eq!(g.data(), &[0.0]);
    let rows = eval1(Tensor::identity(4), |t, x| t.embedding(x, &[2])).unwrap();
    assert_eq!(rows.data(), &[0.0, 0.0, 1.0, 0.0]);
    let oob = eval1(Tensor::identity(4), |t, x| t.embedding(x, &[4]));
    assert!(matches!(oob, Err(NumError::Index { index: 4, extent: 4, .. })));
}

#[test]
fn cross_entropy_examples() {
    let mut perfect = vec![0.0; 3 * 4];
    for (i, &t) in [2usize, 0, 3].iter().enumerate() {
        perfect[i * 4 + t] = 60.0;
    }
    let ce = eval1(Tensor::matrix(3, 4, perfect).unwrap(), |t, x| t.cross_entropy(x, &[2, 0, 3])).unwrap();
    assert!(ce.item() < 1e-20);
    let uniform = eval1(Tensor::zeros(&[5, 4]), |t, x| t.cross_entropy(x, &[0, 1, 2, 3, 0])).unwrap();
    assert!((uniform.item() - 4f64.ln()).abs() < 1e-12);
    let empty = eval1(Tensor::zeros(&[1, 4]), |t, x| t.cross_entropy(x, &[]));
    assert!(matches!(empty, Err(NumError::Contract(_))));
    let bad = eval1(Tensor::zeros(&[1, 4]), |t, x| t.cross_entropy(x, &[4]));
    assert!(matches!(bad, Err(NumError::Index { .. })));
}

#[test]
fn mse_examples() {
    let same = eval1(Tensor::vector(vec![1.5, -2.0]), |t, x| t.mse(x, &[1.5, -2.0])).unwrap();
    assert_eq!(same.item(), 0.0);
    let empty = eval1(Tensor::vector(vec![1.0]), |t, x| t.mse(x, &[]));
    assert!(matches!(empty, Err(NumError::Contract(_))));
}

#[test]
fn backward_contracts() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0]));
    let y = t.scale(x, 2.0);
    assert!(matches!(t.backward(y), Err(NumError::Contract(_))));

    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0]));
    let s = t.sum(x);
    assert!(t.backward(s).is_ok());
    assert!(matches!(t.backward(s), Err(NumError::Contract(_))));
}

#[test]
fn zero_weighted_term_contributes_no_gradient() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![0.3, -0.4]));
    let w = t.param(Tensor::vector(vec![2.0, 5.0]));
    let a = t.mse(x, &[1.0, 1.0]).unwrap();
    let b = t.mse(w, &[0.0, 0.0]).unwrap();
    let b0 = t.scale(b, 0.0);
    let total = t.add(a, b0).unwrap();
    let g = t.backward(total).unwrap();
    assert!(g.get(w).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(g.get(x).unwrap().data().iter().all(|&v| v != 0.0));
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![6, 8], (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap());
        let layout = std::sync::Arc::new(AttentionLayout::single(6, 2));
        let a = t.attention(x, x, x, layout).unwrap();
        let s = t.softmax_rows(a).unwrap();
        let l = t.cross_entropy(s, &[0, 1, 2, 3, 4, 5]).unwrap();
        let g = t.backward(l).unwrap();
        (t.value(l).item(), g.get(x).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn attention_ignores_padding_keys_and_other_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 5;
    let q = Tensor::new(vec![n, 4], (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let run = |kv: &Tensor<f64>, valid: Vec<bool>| {
        let mut t = Tape::new();
        let (qv, kvv) = (t.constant(q.clone()), t.constant(kv.clone()));
        let layout = std::sync::Arc::new(AttentionLayout {
            heads: 2,
            segments: vec![(0, n)],
            key_valid: Some(valid),
        });
        let a = t.attention(qv, kvv, kvv, layout).unwrap();
        t.value(a).clone()
    };
    let kv = Tensor::new(vec![n, 4], (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut kv2 = kv.clone();
    for j in 0..4 {
        kv2.data_mut()[4 * 4 + j] = 99.0;
    }
    let valid = vec![true, true, true, true, false];
    let (a, b) = (run(&kv, valid.clone()), run(&kv2, valid));
    for i in 0..n {
        assert_eq!(a.row(i), b.row(i));
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions_and_shift_invariant(
        row in prop::collection::vec(-30.0f64..30.0, 2..12),
        shift in -50.0f64..50.0,
    ) {
        let n = row.len();
        let base = eval1(Tensor::matrix(1, n, row.clone()).unwrap(), |t, x| t.softmax_rows(x)).unwrap();
        let shifted = eval1(
            Tensor::matrix(1, n, row.iter().map(|v| v + shift).collect()).unwrap(),
            |t, x| t.softmax_rows(x),
        ).unwrap();
        let total: f64 = base.data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(base.data().iter().all(|&v| v >= 0.0));
        prop_assert!(base.max_abs_diff(&shifted) < 1e-10);
    }

    #[test]
    fn layer_norm_rows_are_standardized(row in prop::collection::vec(-10.0f64..10.0, 2..16)) {
        let n = row.len();
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        prop_assume!(var > 1e-2);
        let y = plain_layer_norm(Tensor::matrix(1, n, row).unwrap());
        let ym = y.data().iter().sum::<f64>() / n as f64;
        let yv = y.data().iter().map(|v| (v - ym).powi(2)).sum::<f64>() / n as f64;
        prop_assert!(ym.abs() < 1e-10);
        // epsilon 1e-5 inside the root shrinks the variance by var / (var + eps)
        prop_assert!((yv - var / (var + 1e-5)).abs() < 1e-6);
        prop_assert!((yv - 1.0).abs() < 1e-3);
    }
}
