use medscale::claimsgen::{CodeSystem, EventRecord, PatientRecord, Sex};
use medscale::corpus::{build_sequence, build_vocab, TokenSequence, TokenType, Vocabulary};
use medscale::embed::*;
use medscale::numcore::{ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Eq. (4) read off directly: find the bin j holding `a`, ones before it, the
/// in-bin fraction at j, zeros after. Zero-width bins count as passed once `a`
/// is strictly above them.
fn ple_oracle(edges: &[f64], a: f64) -> Vec<f64> {
    let d = edges.len() - 1;
    let a = a.clamp(edges[0], edges[d]);
    (1..=d)
        .map(|k| {
            let (lo, hi) = (edges[k - 1], edges[k]);
            if a == edges[d] {
                1.0
            } else if a >= hi && hi > lo {
                1.0
            } else if a < lo {
                0.0
            } else if hi == lo {
                if a > lo { 1.0 } else { 0.0 }
            } else {
                (a - lo) / (hi - lo)
            }
        })
        .collect()
}

#[test]
fn uniform_sample_gives_integer_edges() {
    let enc = fit_ple(&[4.0, 0.0, 3.0, 1.0, 2.0], 4).unwrap();
    assert_eq!(enc.edges(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
    assert_eq!(enc.encode(2.5).unwrap(), vec![1.0, 1.0, 0.5, 0.0]);
    assert_eq!(enc.encode(0.0).unwrap(), vec![0.0; 4]);
    assert_eq!(enc.encode(4.0).unwrap(), vec![1.0; 4]);
    assert_eq!(enc.encode(-7.0).unwrap(), vec![0.0; 4]);
    assert_eq!(enc.encode(99.0).unwrap(), vec![1.0; 4]);
    assert!(matches!(enc.encode(f64::NAN), Err(EmbedError::NonFinite(_))));
}

#[test]
fn constant_sample_is_repaired_deterministically() {
    let enc = fit_ple(&[2.0; 10], 4).unwrap();
    assert!(enc.edges().windows(2).all(|w| w[0] < w[1]));
    assert_eq!(enc.encode(2.0).unwrap(), vec![0.0; 4]);
    assert_eq!(enc.encode(3.0).unwrap(), vec![1.0; 4]);
    assert_eq!(fit_ple(&[2.0; 10], 4).unwrap(), enc);
    assert!(matches!(fit_ple(&[], 4), Err(EmbedError::Contract(_))));
}

#[test]
fn normal_sample_edges_are_nondecreasing() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sample: Vec<f64> = (0..500).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect();
    let enc = fit_ple(&sample, 8).unwrap();
    assert!(enc.edges().windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(enc.edges()[0], sample.iter().cloned().fold(f64::INFINITY, f64::min));
    assert_eq!(enc.edges()[8], sample.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
}

#[test]
fn ties_leave_fewer_than_d_duplicates_and_match_the_oracle() {
    let sample = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0];
    let enc = fit_ple(&sample, 4).unwrap();
    let dups = enc.edges().windows(2).filter(|w| w[0] == w[1]).count();
    assert!(dups > 0 && dups < 4);
    for a in [-1.0, 0.0, 1e-9, 0.5, 1.0, 1.5, 2.0] {
        assert_eq!(enc.encode(a).unwrap(), ple_oracle(enc.edges(), a), "a = {a}");
    }
}

fn arb_edges() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), -5.0f64..5.0], 2..10).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        if v[0] == v[v.len() - 1] {
            let last = v.len() - 1;
            v[last] += 1.0;
        }
        v
    })
}

proptest! {
    #[test]
    fn encode_matches_direct_evaluation(edges in arb_edges(), a in -7.0f64..7.0) {
        let enc = PLEncoder::from_edges(edges.clone()).unwrap();
        let got = enc.encode(a).unwrap();
        for (g, w) in got.iter().zip(ple_oracle(&edges, a)) {
            prop_assert!((g - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn encode_is_monotone(edges in arb_edges(), a in -7.0f64..7.0, b in -7.0f64..7.0) {
        let enc = PLEncoder::from_edges(edges).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (u, v) = (enc.encode(lo).unwrap(), enc.encode(hi).unwrap());
        prop_assert!(u.iter().zip(&v).all(|(x, y)| x <= y));
    }

    #[test]
    fn component_sum_runs_from_zero_to_d(sample in prop::collection::vec(-3.0f64..3.0, 10..40), t in 0.0f64..1.0) {
        let enc = fit_ple(&sample, 6).unwrap();
        let e = enc.edges();
        prop_assume!(e.windows(2).all(|w| w[0] < w[1]));
        let sum = |a: f64| enc.encode(a).unwrap().iter().sum::<f64>();
        prop_assert_eq!(sum(e[0]), 0.0);
        prop_assert_eq!(sum(e[6]), 6.0);
        let a = e[0] + t * (e[6] - e[0]);
        // strictly positive-width bins: continuity across every interior edge
        for &b in &e[1..6] {
            prop_assert!((sum(b - 1e-9) - sum(b)).abs() < 1e-6);
            prop_assert!((sum(b + 1e-9) - sum(b)).abs() < 1e-6);
        }
        prop_assert!(sum(a) >= 0.0 && sum(a) <= 6.0);
    }
}

fn toy() -> (Vocabulary, TokenSequence) {
    let ev = |c: &str, s, a| EventRecord { code: c.into(), system: s, age_days: a };
    let p = PatientRecord {
        patient_id: "x".into(),
        sex: Sex::F,
        events: vec![
            ev("A01", CodeSystem::Diagnosis, 20000),
            ev("2171022", CodeSystem::Medication, 20010),
            ev("B02", CodeSystem::Diagnosis, 21000),
            ev("A01", CodeSystem::Diagnosis, 25000),
        ],
    };
    let v = build_vocab(std::slice::from_ref(&p), 1);
    let s = build_sequence(&p, &v).unwrap();
    (v, s)
}

fn setup(d: usize, seed: u64) -> (Vocabulary, TokenSequence, ParamStore<f64>, EmbeddingStack, PLEncoder, AgeStandardizer) {
    let (v, s) = toy();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stack = EmbeddingStack::init(&mut store, &v, d, &mut rng);
    let std = AgeStandardizer::fit_sequences(std::slice::from_ref(&s)).unwrap();
    let z: Vec<f64> = clinical_ages(std::slice::from_ref(&s)).iter().map(|&a| std.apply(a)).collect();
    let enc = fit_ple(&z, d).unwrap();
    (v, s, store, stack, enc, std)
}

#[test]
fn special_positions_are_exactly_their_table_rows() {
    let (_, s, store, stack, enc, std) = setup(4, 1);
    let e = embed_sequence(&s, &store, &stack, &enc, &std).unwrap();
    assert_eq!(e.row(0), store.get(stack.w_special).row(s.token_ids[0] as usize));
    assert_eq!(e.row(1), store.get(stack.w_special).row(s.token_ids[1] as usize));
}

#[test]
fn zero_age_projection_leaves_code_rows() {
    let (_, s, mut store, stack, enc, std) = setup(4, 2);
    store.get_mut(stack.w_age).data_mut().fill(0.0);
    let e = embed_sequence(&s, &store, &stack, &enc, &std).unwrap();
    for i in 2..s.len() {
        let table = if s.tags[i] == TokenType::Diagnosis { stack.w_diag } else { stack.w_med };
        assert_eq!(e.row(i), store.get(table).row(s.token_ids[i] as usize));
    }
}

/// Straight scalar evaluation of the embedding equation.
fn embed_oracle(s: &TokenSequence, store: &ParamStore<f64>, stack: &EmbeddingStack, enc: &PLEncoder, std: &AgeStandardizer) -> Vec<Vec<f64>> {
    let d = stack.d;
    (0..s.len())
        .map(|i| {
            let id = s.token_ids[i] as usize;
            let table = match s.tags[i] {
                TokenType::Special => stack.w_special,
                TokenType::Diagnosis => stack.w_diag,
                TokenType::Medication => stack.w_med,
            };
            let mut row: Vec<f64> = (0..d).map(|j| store.get(table).at(id, j)).collect();
            if s.tags[i] != TokenType::Special {
                let u = ple_oracle(enc.edges(), std.apply(s.ages[i] as f64));
                for (j, r) in row.iter_mut().enumerate() {
                    *r += store.get(stack.b_age).data()[j];
                    for (k, uk) in u.iter().enumerate() {
                        *r += uk * store.get(stack.w_age).at(k, j);
                    }
                }
            }
            row
        })
        .collect()
}

#[test]
fn matches_scalar_oracle() {
    for seed in 0..5 {
        let (_, s, mut store, stack, enc, std) = setup(6, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        store.get_mut(stack.b_age).data_mut().iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        let e = embed_sequence(&s, &store, &stack, &enc, &std).unwrap();
        for (i, want) in embed_oracle(&s, &store, &stack, &enc, &std).iter().enumerate() {
            for (g, w) in e.row(i).iter().zip(want) {
                assert!((g - w).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn linear_in_each_table() {
    let (_, s, store, stack, enc, std) = setup(4, 3);
    let e = |st: &ParamStore<f64>| embed_sequence(&s, st, &stack, &enc, &std).unwrap();
    for table in [stack.w_special, stack.w_diag, stack.w_med, stack.w_age] {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let delta: Vec<f64> = (0..store.get(table).numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let with = |scale: f64| {
            let mut st = store.clone();
            st.get_mut(table).data_mut().iter_mut().zip(&delta).for_each(|(w, d)| *w += scale * d);
            e(&st)
        };
        let (e0, e1, e2) = (with(0.0), with(1.0), with(2.0));
        // affine in the table: e(2δ) − e(δ) = e(δ) − e(0)
        for ((a, b), c) in e0.data().iter().zip(e1.data()).zip(e2.data()) {
            assert!(((c - b) - (b - a)).abs() < 1e-12);
        }
    }
}

#[test]
fn tag_table_mismatch_is_a_contract_error() {
    let (_, mut s, store, stack, enc, std) = setup(4, 4);
    s.token_ids[2] = 999;
    assert!(matches!(embed_sequence(&s, &store, &stack, &enc, &std), Err(EmbedError::Contract(_))));
    let (_, mut s, ..) = setup(4, 4);
    s.tags[3] = TokenType::Special;
    s.token_ids[3] = 0;
    assert!(matches!(embed_sequence(&s, &store, &stack, &enc, &std), Err(EmbedError::Contract(_))));
    let _ = Tensor::<f64>::zeros(&[1]);
}

#[test]
fn standardizer_has_zero_mean_unit_spread() {
    let s = AgeStandardizer::fit(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    let z: Vec<f64> = [1.0, 2.0, 3.0, 4.0].iter().map(|&a| s.apply(a)).collect();
    assert!(z.iter().sum::<f64>().abs() < 1e-12);
    assert!((z.iter().map(|v| v * v).sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
    assert_eq!(AgeStandardizer::fit(&[5.0, 5.0]).unwrap().std, 1.0);
}
