use medscale::baseline::*;
use medscale::claimsgen::{CodeSystem, EventRecord, PatientRecord, Sex};
use medscale::corpus::{build_sequence, build_vocab, Vocabulary};
use medscale::evalmetrics::auroc;
use medscale::finetune::LabeledExample;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ev(code: &str, system: CodeSystem, age: u32) -> EventRecord {
    EventRecord { code: code.into(), system, age_days: age }
}

fn small_vocab() -> Vocabulary {
    let events = ["A01", "B02", "C03"]
        .iter()
        .map(|c| ev(c, CodeSystem::Diagnosis, 1))
        .chain(["1000001", "2000002"].iter().map(|c| ev(c, CodeSystem::Medication, 1)))
        .collect();
    build_vocab(&[PatientRecord { patient_id: "v".into(), sex: Sex::F, events }], 1)
}

fn example(vocab: &Vocabulary, sex: Sex, events: Vec<EventRecord>, index_age: u32) -> LabeledExample {
    let r = PatientRecord { patient_id: "x".into(), sex, events };
    LabeledExample { patient_id: "x".into(), input: build_sequence(&r, vocab).unwrap(), label: false, index_age }
}

fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
    let names = (0..rows[0].len()).map(|i| format!("f{i}")).collect();
    FeatureMatrix::from_rows(names, rows).unwrap()
}

#[test]
fn featurize_counts_codes_then_sex_and_age() {
    let v = small_vocab();
    let e = example(&v, Sex::M, vec![ev("A01", CodeSystem::Diagnosis, 5), ev("A01", CodeSystem::Diagnosis, 9), ev("B02", CodeSystem::Diagnosis, 9)], 30);
    assert_eq!(featurize(&e, &v), vec![2.0, 1.0, 0.0, 0.0, 0.0, 1.0, 30.0]);
    let f = example(&v, Sex::F, vec![ev("2000002", CodeSystem::Medication, 5), ev("C03", CodeSystem::Diagnosis, 6)], 7);
    assert_eq!(featurize(&f, &v), vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 7.0]);
}

#[test]
fn reference_vocabulary_sizes_give_1932_columns() {
    let mut events: Vec<EventRecord> = (0..936).map(|i| ev(&format!("D{i:04}"), CodeSystem::Diagnosis, i)).collect();
    events.extend((0..994).map(|i| ev(&format!("{:07}", 1_000_000 + i), CodeSystem::Medication, i)));
    let v = build_vocab(&[PatientRecord { patient_id: "v".into(), sex: Sex::M, events: events.clone() }], 1);
    assert_eq!((v.n_diag(), v.n_med()), (936, 994));
    let e = example(&v, Sex::M, events[..10].to_vec(), 500);
    assert_eq!(featurize(&e, &v).len(), 1932);
    assert_eq!(FeatureMatrix::column_names(&v).len(), 1932);
}

fn codes() -> Vec<(&'static str, CodeSystem)> {
    vec![
        ("A01", CodeSystem::Diagnosis),
        ("B02", CodeSystem::Diagnosis),
        ("C03", CodeSystem::Diagnosis),
        ("1000001", CodeSystem::Medication),
        ("2000002", CodeSystem::Medication),
    ]
}

proptest! {
    #[test]
    fn featurize_ignores_order_and_adds_over_histories(
        a in prop::collection::vec((0usize..5, 0u32..100), 2..20),
        b in prop::collection::vec((0usize..5, 0u32..100), 2..20),
        seed in any::<u64>(),
    ) {
        let v = small_vocab();
        let cs = codes();
        let mk = |xs: &[(usize, u32)]| xs.iter().map(|&(c, t)| ev(cs[c].0, cs[c].1, t)).collect::<Vec<_>>();
        let row = |evs: Vec<EventRecord>| featurize(&example(&v, Sex::F, evs, 200), &v);
        let (ra, rb) = (row(mk(&a)), row(mk(&b)));
        let mut joined = mk(&a);
        joined.extend(mk(&b));
        let rab = row(joined.clone());
        let n = ra.len() - 2;
        for j in 0..n {
            prop_assert_eq!(rab[j], ra[j] + rb[j]);
        }
        // Same multiset of events presented in a different order.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled = joined;
        for e in shuffled.iter_mut() {
            e.age_days = rng.random_range(0..100);
        }
        prop_assert_eq!(row(shuffled), rab);
    }
}

fn walk(tree: &Tree, node: usize, x: &[f64]) -> f64 {
    match tree.nodes[node] {
        Node::Leaf { value } => value,
        Node::Split { feature, threshold, left, right } => {
            if x[feature] <= threshold {
                walk(tree, left, x)
            } else {
                walk(tree, right, x)
            }
        }
    }
}

fn random_problem(seed: u64, n: usize, p: usize) -> (FeatureMatrix, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| if rng.random_bool(0.6) { 0.0 } else { rng.random_range(0..5) as f64 }).collect()).collect();
    let y = rows.iter().map(|r| r[0] + r[1] - r[2] + rng.random_range(-2.0..2.0) > 2.0).collect();
    (matrix(&rows), y)
}

#[test]
fn predictions_match_recursive_tree_walk() {
    let (x, y) = random_problem(1, 300, 8);
    let params = GbdtParams { n_trees: 30, subsample: 0.8, colsample: 0.8, min_samples_leaf: 5, ..Default::default() };
    let m = train_gbdt(&x, &y, &params).unwrap();
    let p = predict_gbdt(&m, &x).unwrap();
    for i in 0..x.rows {
        let raw = m.base_score + m.trees.iter().map(|t| walk(t, 0, x.row(i))).sum::<f64>();
        assert!((p[i] - 1.0 / (1.0 + (-raw).exp())).abs() <= 1e-12);
    }
}

#[test]
fn xor_is_learned_with_depth_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..400 {
        let (a, b) = (rng.random_bool(0.5), rng.random_bool(0.5));
        rows.push(vec![a as u8 as f64, b as u8 as f64, rng.random_range(0.0..1.0)]);
        y.push(a ^ b);
    }
    let x = matrix(&rows);
    let params = GbdtParams { max_depth: 2, max_leaves: 4, n_trees: 200, min_samples_leaf: 1, ..Default::default() };
    let m = train_gbdt(&x, &y, &params).unwrap();
    let a = auroc(&predict_gbdt(&m, &x).unwrap(), &y).unwrap();
    assert!(a > 0.99, "{a}");
    // Every cell of the truth table is classified correctly.
    for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
        let p = predict_gbdt(&m, &matrix(&[vec![a, b, 0.5]])).unwrap()[0];
        assert_eq!(p > 0.5, (a != b), "cell ({a}, {b}) -> {p}");
    }
}

#[test]
fn single_stump_recovers_step_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
    let y: Vec<bool> = xs.iter().map(|&v| v > 0.37).collect();
    let x = matrix(&xs.iter().map(|&v| vec![v]).collect::<Vec<_>>());
    let params = GbdtParams { max_depth: 1, n_trees: 1, min_samples_leaf: 1, lambda: 0.0, ..Default::default() };
    let m = train_gbdt(&x, &y, &params).unwrap();
    let Node::Split { feature, threshold, .. } = m.trees[0].nodes[0] else { panic!("root did not split") };
    assert_eq!(feature, 0);

    // Brute force: every midpoint, gain from raw gradient sums at the base score.
    let p0 = 1.0 / (1.0 + (-m.base_score).exp());
    let mut sorted = xs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (mut best_gain, mut best_t) = (f64::MIN, 0.0);
    for w in sorted.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        let side = |left: bool| {
            let idx: Vec<usize> = (0..xs.len()).filter(|&i| (xs[i] <= t) == left).collect();
            let g: f64 = idx.iter().map(|&i| p0 - y[i] as u8 as f64).sum();
            g * g / (idx.len() as f64 * p0 * (1.0 - p0))
        };
        let gain = side(true) + side(false);
        if gain > best_gain + 1e-12 {
            (best_gain, best_t) = (gain, t);
        }
    }
    assert!((threshold - best_t).abs() < 1e-12);
    let below = sorted.iter().copied().filter(|&v| v <= 0.37).fold(f64::MIN, f64::max);
    let above = sorted.iter().copied().find(|&v| v > 0.37).unwrap();
    assert!(below < threshold && threshold < above);
}

#[test]
fn constant_and_degenerate_models() {
    let x = matrix(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![3.0, 0.0]]);
    let m = train_gbdt(&x, &[true, true, true], &GbdtParams::default()).unwrap();
    assert!(m.trees.is_empty());
    assert!(predict_gbdt(&m, &x).unwrap().iter().all(|&p| p > 0.999));

    let zero = GbdtModel { trees: vec![], learning_rate: 0.1, base_score: 0.3, n_features: 2 };
    let want = 1.0 / (1.0 + (-0.3f64).exp());
    assert!(predict_gbdt(&zero, &x).unwrap().iter().all(|&p| p == want));

    let (x, y) = random_problem(4, 100, 3);
    let m = train_gbdt(&x, &y, &GbdtParams { n_trees: 10, min_samples_leaf: 2, ..Default::default() }).unwrap();
    let dup = matrix(&[x.row(5).to_vec(), x.row(5).to_vec()]);
    let p = predict_gbdt(&m, &dup).unwrap();
    assert_eq!(p[0], p[1]);
    assert!(matches!(predict_gbdt(&m, &matrix(&[vec![1.0, 2.0]])), Err(BaselineError::Contract(_))));
    assert!(train_gbdt(&x, &y, &GbdtParams { subsample: 0.0, ..Default::default() }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trees_respect_shape_limits(seed in 0u64..1000, depth in 1usize..5, leaves in 2usize..12) {
        let (x, y) = random_problem(seed, 150, 6);
        let params = GbdtParams { max_depth: depth, max_leaves: leaves, n_trees: 5, min_samples_leaf: 1, subsample: 0.8, ..Default::default() };
        for t in &train_gbdt(&x, &y, &params).unwrap().trees {
            prop_assert!(t.depth() <= depth);
            prop_assert!(t.n_leaves() <= leaves);
        }
    }

    #[test]
    fn full_sample_training_loss_never_increases(seed in 0u64..1000) {
        let (x, y) = random_problem(seed, 120, 5);
        let params = GbdtParams { n_trees: 25, min_samples_leaf: 3, ..Default::default() };
        let m = train_gbdt(&x, &y, &params).unwrap();
        let loss = |k: usize| -> f64 {
            (0..x.rows).map(|i| {
                let p = 1.0 / (1.0 + (-m.raw_score_prefix(x.row(i), k)).exp());
                if y[i] { -p.ln() } else { -(1.0 - p).ln() }
            }).sum::<f64>() / x.rows as f64
        };
        for k in 0..m.trees.len() {
            prop_assert!(loss(k + 1) <= loss(k) + 1e-12, "round {}: {} -> {}", k, loss(k), loss(k + 1));
        }
    }

    #[test]
    fn folds_are_disjoint_exhaustive_and_stratified(n in 5usize..300, rate in 0.05f64..0.95, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(rate)).collect();
        let folds = stratified_folds(&y, 5, seed).unwrap();
        prop_assert_eq!(folds.len(), n);
        prop_assert!(folds.iter().all(|&f| f < 5));
        let pos: Vec<usize> = (0..5).map(|f| (0..n).filter(|&i| folds[i] == f && y[i]).count()).collect();
        let size: Vec<usize> = (0..5).map(|f| folds.iter().filter(|&&g| g == f).count()).collect();
        prop_assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);
        prop_assert!(size.iter().max().unwrap() - size.iter().min().unwrap() <= 1);
        prop_assert_eq!(size.iter().sum::<usize>(), n);
    }
}

#[test]
fn fold_errors_and_determinism() {
    assert!(matches!(stratified_folds(&[true, false, true], 5, 0), Err(BaselineError::Contract(_))));
    let y: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
    assert_eq!(stratified_folds(&y, 5, 9).unwrap(), stratified_folds(&y, 5, 9).unwrap());
}

#[test]
fn one_point_grid_returns_that_point() {
    let (x, y) = random_problem(5, 100, 4);
    let grid = GridSpec {
        learning_rates: vec![0.05],
        max_depths: vec![3],
        max_leaves: vec![7],
        subsamples: vec![1.0],
        colsamples: vec![1.0],
        n_trees: vec![20],
    };
    let base = GbdtParams { min_samples_leaf: 3, ..Default::default() };
    let r = cv_grid_search(&x, &y, &grid, &base, 5, 0).unwrap();
    assert_eq!(r.points.len(), 1);
    assert_eq!(r.best, GbdtParams { learning_rate: 0.05, max_depth: 3, max_leaves: 7, n_trees: 20, ..base });
}

#[test]
fn grid_search_matches_exhaustive_oracle_on_planted_signal() {
    let (x, y) = random_problem(6, 200, 6);
    let grid = GridSpec {
        learning_rates: vec![0.05, 0.3],
        max_depths: vec![1, 3],
        max_leaves: vec![4],
        subsamples: vec![0.8, 1.0],
        colsamples: vec![1.0],
        n_trees: vec![5, 20, 40],
    };
    let base = GbdtParams { min_samples_leaf: 3, ..Default::default() };
    let r = cv_grid_search(&x, &y, &grid, &base, 5, 11).unwrap();
    assert_eq!(r.points.len(), 2 * 2 * 2 * 3);

    // Oracle: train each grid point directly at its own tree count.
    let folds = stratified_folds(&y, 5, 11).unwrap();
    let mut oracle = Vec::new();
    for p in grid.points(&base) {
        let mut s = 0.0;
        for f in 0..5 {
            let tr: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
            let va: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
            let m = train_gbdt(&x.select(&tr), &tr.iter().map(|&i| y[i]).collect::<Vec<_>>(), &p).unwrap();
            let pr = predict_gbdt(&m, &x.select(&va)).unwrap();
            s += auroc(&pr, &va.iter().map(|&i| y[i]).collect::<Vec<_>>()).unwrap();
        }
        oracle.push(s / 5.0);
    }
    for (pt, o) in r.points.iter().zip(&oracle) {
        assert!((pt.mean_auroc - o).abs() < 1e-12);
    }
    let best = oracle.iter().cloned().fold(f64::MIN, f64::max);
    assert!(best - r.best_mean_auroc <= 0.02);
    assert!(r.best_mean_auroc > 0.75, "planted signal recovered: {}", r.best_mean_auroc);
}

#[test]
fn feature_matrix_cache_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.bin");
    let (x, _) = random_problem(7, 30, 5);
    write_feature_matrix(&path, &x).unwrap();
    assert_eq!(read_feature_matrix(&path).unwrap(), x);
    std::fs::write(&path, b"garbage").unwrap();
    assert!(read_feature_matrix(&path).is_err());
}
