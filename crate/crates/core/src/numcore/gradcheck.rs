//! Central finite-difference checks for every differentiable tape op.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares tape gradients of `f` with central differences for every input entry.
fn check<F>(inputs: Vec<Tensor<f64>>, f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for j in 0..input.numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            let a = analytic.data()[j];
            assert!(
                rel_err(a, numeric) < TOL || (a - numeric).abs() < 1e-10,
                "input {i} entry {j}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

/// Reduces any tensor to a scalar through fixed random weights so every
/// output entry carries a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&shape, &mut rng));
    let p = tape.mul(x, w).unwrap();
    tape.sum(p)
}

#[test]
fn matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check(vec![random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)], |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        weighted_sum(t, y, 9)
    });
}

#[test]
fn elementwise_and_layout_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    check(
        vec![random(&[3, 4], &mut rng), random(&[3, 4], &mut rng), random(&[4], &mut rng)],
        |t, v| {
            let a = t.add(v[0], v[1]).unwrap();
            let m = t.mul(a, v[0]).unwrap();
            let r = t.add_row(m, v[2]).unwrap();
            let s = t.scale(r, 0.7);
            let tr = t.transpose(s).unwrap();
            let rs = t.reshape(tr, &[2, 6]).unwrap();
            let left = t.slice(rs, 1, 1, 4).unwrap();
            let top = t.slice(rs, 0, 0, 1).unwrap();
            let top3 = t.slice(top, 1, 0, 3).unwrap();
            let cat = t.concat(&[left, top3], 0).unwrap();
            let cat2 = t.concat(&[cat, cat], 1).unwrap();
            weighted_sum(t, cat2, 11)
        },
    );
}

#[test]
fn gelu_softmax_layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    check(
        vec![random(&[3, 5], &mut rng), random(&[5], &mut rng), random(&[5], &mut rng)],
        |t, v| {
            let g = t.gelu(v[0]);
            let n = t.layer_norm(g, v[1], v[2]).unwrap();
            let s = t.softmax_rows(n).unwrap();
            weighted_sum(t, s, 13)
        },
    );
}

#[test]
fn gather_gradient_scatters_into_table_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    check(vec![random(&[5, 3], &mut rng)], |t, v| {
        let e = t.embedding(v[0], &[4, 0, 4, 2]).unwrap();
        let s = t.scatter_rows(e, &[1, 0, 1, 2], 3).unwrap();
        weighted_sum(t, s, 17)
    });
}

#[test]
fn attention_gradients_with_segments_and_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layout = Arc::new(AttentionLayout {
        heads: 2,
        segments: vec![(0, 3), (3, 4)],
        key_valid: Some(vec![true, true, true, true, true, false, true]),
    });
    check(
        vec![random(&[7, 4], &mut rng), random(&[7, 4], &mut rng), random(&[7, 4], &mut rng)],
        move |t, v| {
            let a = t.attention(v[0], v[1], v[2], layout.clone()).unwrap();
            weighted_sum(t, a, 19)
        },
    );
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    check(vec![random(&[4, 6], &mut rng)], |t, v| t.cross_entropy(v[0], &[1, 5, 0, 1]).unwrap());
    check(vec![random(&[3], &mut rng)], |t, v| t.mse(v[0], &[0.2, -1.0, 0.5]).unwrap());
    check(vec![random(&[4, 1], &mut rng)], |t, v| {
        t.bce_with_logits(v[0], &[1.0, 0.0, 0.0, 1.0]).unwrap()
    });
}

#[test]
fn mse_gradient_has_closed_form() {
    let mut tape = Tape::new();
    let p = tape.param(Tensor::vector(vec![0.0, 0.0]));
    let loss = tape.mse(p, &[1.0, 3.0]).unwrap();
    assert_eq!(tape.value(loss).item(), 5.0);
    let g = tape.backward(loss).unwrap();
    // 2 (pred - target) / m
    assert_eq!(g.get(p).unwrap().data(), &[-1.0, -3.0]);
}

#[test]
fn square_derivative_at_three_is_six() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![3.0]));
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[6.0]);
}
