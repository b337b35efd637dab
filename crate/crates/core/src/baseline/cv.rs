use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_gbdt, BaselineError, FeatureMatrix, GbdtParams};
use crate::evalmetrics::auroc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub learning_rates: Vec<f64>,
    pub max_depths: Vec<usize>,
    pub max_leaves: Vec<usize>,
    pub subsamples: Vec<f64>,
    pub colsamples: Vec<f64>,
    pub n_trees: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.01, 0.05, 0.1],
            max_depths: vec![3, 4, 6],
            max_leaves: vec![7, 15, 31],
            subsamples: vec![0.8, 1.0],
            colsamples: vec![0.8, 1.0],
            n_trees: vec![50, 100, 200],
        }
    }
}

impl GridSpec {
    /// Cartesian product in declaration order, `n_trees` varying fastest.
    pub fn points(&self, base: &GbdtParams) -> Vec<GbdtParams> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &max_depth in &self.max_depths {
                for &max_leaves in &self.max_leaves {
                    for &subsample in &self.subsamples {
                        for &colsample in &self.colsamples {
                            for &n_trees in &self.n_trees {
                                out.push(GbdtParams { learning_rate, max_depth, max_leaves, subsample, colsample, n_trees, ..base.clone() });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: GbdtParams,
    pub fold_auroc: Vec<f64>,
    pub mean_auroc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: GbdtParams,
    pub best_mean_auroc: f64,
    pub folds: usize,
    pub seed: u64,
    pub points: Vec<GridPoint>,
}

/// Fold id per row. Each class is shuffled and dealt round-robin, so every
/// fold's positive count is within one of every other's.
pub fn stratified_folds(y: &[bool], k: usize, seed: u64) -> Result<Vec<usize>, BaselineError> {
    if k < 2 || y.len() < k {
        return Err(BaselineError::Contract(format!("{} examples cannot fill {k} folds", y.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; y.len()];
    let mut next = 0;
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

/// Stratified k-fold search maximising mean validation AUROC; ties go to the
/// earlier grid point. Forests are trained once at the largest tree count of
/// each configuration and scored at every smaller count by prefix.
pub fn cv_grid_search(x: &FeatureMatrix, y: &[bool], grid: &GridSpec, base: &GbdtParams, k: usize, seed: u64) -> Result<CvResult, BaselineError> {
    if x.rows != y.len() {
        return Err(BaselineError::Contract(format!("{} rows with {} labels", x.rows, y.len())));
    }
    let folds = stratified_folds(y, k, seed)?;
    let points = grid.points(base);
    if points.is_empty() {
        return Err(BaselineError::Config("empty grid".into()));
    }
    let mut tree_counts = grid.n_trees.clone();
    tree_counts.sort_unstable();
    tree_counts.dedup();
    let max_trees = *tree_counts.last().expect("nonempty grid");
    let per_config = grid.n_trees.len();
    let configs: Vec<GbdtParams> = points.chunks(per_config).map(|ch| GbdtParams { n_trees: max_trees, ..ch[0].clone() }).collect();

    let jobs: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    // scores[(c, f)][t] = validation AUROC of config c on fold f with tree_counts[t] trees
    let scores: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(c, f)| -> Result<Vec<f64>, BaselineError> {
            let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
            let val: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
            let ytr: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let yva: Vec<bool> = val.iter().map(|&i| y[i]).collect();
            let model = train_gbdt(&x.select(&train), &ytr, &configs[c])?;
            tree_counts
                .iter()
                .map(|&t| {
                    let s: Vec<f64> = val.iter().map(|&i| model.raw_score_prefix(x.row(i), t)).collect();
                    Ok(auroc(&s, &yva)?)
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let mut results = Vec::with_capacity(points.len());
    for (pi, p) in points.iter().enumerate() {
        let c = pi / per_config;
        let t = tree_counts.iter().position(|&n| n == p.n_trees).expect("tree count in grid");
        let fold_auroc: Vec<f64> = (0..k).map(|f| scores[c * k + f][t]).collect();
        let mean_auroc = fold_auroc.iter().sum::<f64>() / k as f64;
        results.push(GridPoint { params: p.clone(), fold_auroc, mean_auroc });
    }
    let best = results.iter().fold(&results[0], |b, r| if r.mean_auroc > b.mean_auroc { r } else { b });
    Ok(CvResult { best: best.params.clone(), best_mean_auroc: best.mean_auroc, folds: k, seed, points: results })
}
