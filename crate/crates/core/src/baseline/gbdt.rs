use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BaselineError, FeatureMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub max_leaves: usize,
    /// Row fraction drawn without replacement for each tree.
    pub subsample: f64,
    /// Feature fraction drawn for each tree.
    pub colsample: f64,
    pub n_trees: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    pub min_child_weight: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_depth: 6,
            max_leaves: 31,
            subsample: 1.0,
            colsample: 1.0,
            n_trees: 100,
            lambda: 1.0,
            min_child_weight: 1e-3,
            min_samples_leaf: 20,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(BaselineError::Config(format!("learning_rate {}", self.learning_rate)));
        }
        if !frac(self.subsample) || !frac(self.colsample) {
            return Err(BaselineError::Config("subsample and colsample must lie in (0, 1]".into()));
        }
        if self.max_leaves < 2 || self.max_depth == 0 {
            return Err(BaselineError::Config("trees need max_depth ≥ 1 and max_leaves ≥ 2".into()));
        }
        if !(self.lambda >= 0.0) || !(self.min_child_weight >= 0.0) || self.min_samples_leaf == 0 {
            return Err(BaselineError::Config("lambda, min_child_weight ≥ 0 and min_samples_leaf ≥ 1 required".into()));
        }
        Ok(())
    }
}

/// Rows with `x[feature] <= threshold` go left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// Nodes in creation order; the root is node 0. Leaf values already include
/// the learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Number of splits on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub n_features: usize,
}

impl GbdtModel {
    /// Summed logit of the first `k` trees.
    pub fn raw_score_prefix(&self, x: &[f64], k: usize) -> f64 {
        self.base_score + self.trees[..k.min(self.trees.len())].iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Keeps only the first `k` trees.
    pub fn truncated(&self, k: usize) -> GbdtModel {
        GbdtModel { trees: self.trees[..k.min(self.trees.len())].to_vec(), ..self.clone() }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Sigmoid of base score plus the summed tree outputs.
pub fn predict_gbdt(model: &GbdtModel, x: &FeatureMatrix) -> Result<Vec<f64>, BaselineError> {
    if x.cols() != model.n_features {
        return Err(BaselineError::Contract(format!("model expects {} features, matrix has {}", model.n_features, x.cols())));
    }
    Ok((0..x.rows).map(|i| sigmoid(model.raw_score_prefix(x.row(i), model.trees.len()))).collect())
}

#[derive(Clone, Copy, Debug)]
struct SplitChoice {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Candidate {
    node: usize,
    depth: usize,
    rows: Vec<usize>,
    split: SplitChoice,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    /// Highest gain first; earlier nodes win ties.
    fn cmp(&self, other: &Self) -> Ordering {
        self.split.gain.total_cmp(&other.split.gain).then(other.node.cmp(&self.node))
    }
}

struct Builder<'a> {
    x: &'a FeatureMatrix,
    /// Nonzero `(feature, value)` pairs per row.
    csr: &'a [Vec<(usize, f64)>],
    g: &'a [f64],
    h: &'a [f64],
    params: &'a GbdtParams,
    allowed: Vec<bool>,
    /// Scratch buckets per feature, reset after each node.
    buckets: Vec<Vec<(f64, f64, f64)>>,
    touched: Vec<usize>,
}

impl Builder<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.lambda)
    }

    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let (g, h) = rows.iter().fold((0.0, 0.0), |(g, h), &r| (g + self.g[r], h + self.h[r]));
        -self.params.learning_rate * g / (h + self.params.lambda)
    }

    /// Exact greedy search over every distinct value of every allowed feature.
    fn best_split(&mut self, rows: &[usize]) -> Option<SplitChoice> {
        let p = self.params;
        if rows.len() < 2 * p.min_samples_leaf {
            return None;
        }
        let (gt, ht) = rows.iter().fold((0.0, 0.0), |(g, h), &r| (g + self.g[r], h + self.h[r]));
        let parent = self.score(gt, ht);
        for &r in rows {
            for &(f, v) in &self.csr[r] {
                if self.allowed[f] {
                    if self.buckets[f].is_empty() {
                        self.touched.push(f);
                    }
                    self.buckets[f].push((v, self.g[r], self.h[r]));
                }
            }
        }
        self.touched.sort_unstable();
        let mut best: Option<SplitChoice> = None;
        let mut groups: Vec<(f64, f64, f64, usize)> = Vec::new();
        for &f in &self.touched {
            let bucket = &mut self.buckets[f];
            bucket.sort_by(|a, b| a.0.total_cmp(&b.0));
            // Distinct values with aggregated (G, H, count); implicit zeros form one group.
            groups.clear();
            let zeros = rows.len() - bucket.len();
            let (mut gz, mut hz) = (gt, ht);
            for &(_, g, h) in bucket.iter() {
                gz -= g;
                hz -= h;
            }
            let mut zero_pending = zeros > 0;
            for &(v, g, h) in bucket.iter() {
                if zero_pending && v > 0.0 {
                    groups.push((0.0, gz, hz, zeros));
                    zero_pending = false;
                }
                match groups.last_mut() {
                    Some(last) if last.0 == v => {
                        last.1 += g;
                        last.2 += h;
                        last.3 += 1;
                    }
                    _ => groups.push((v, g, h, 1)),
                }
            }
            if zero_pending {
                groups.push((0.0, gz, hz, zeros));
            }
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
            for w in groups.windows(2) {
                gl += w[0].1;
                hl += w[0].2;
                nl += w[0].3;
                let nr = rows.len() - nl;
                let (gr, hr) = (gt - gl, ht - hl);
                if nl < p.min_samples_leaf || nr < p.min_samples_leaf || hl < p.min_child_weight || hr < p.min_child_weight {
                    continue;
                }
                let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent);
                if gain > 1e-12 && best.is_none_or(|b| gain > b.gain) {
                    best = Some(SplitChoice { gain, feature: f, threshold: 0.5 * (w[0].0 + w[1].0) });
                }
            }
        }
        for &f in &self.touched {
            self.buckets[f].clear();
        }
        self.touched.clear();
        best
    }

    fn grow(&mut self, rows: Vec<usize>) -> Tree {
        let p = self.params;
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut leaf_rows: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut heap = BinaryHeap::new();
        let mut leaves = 1;
        match self.best_split(&rows) {
            Some(split) => heap.push(Candidate { node: 0, depth: 0, rows, split }),
            None => leaf_rows.push((0, rows)),
        }
        while let Some(c) = heap.pop() {
            if leaves >= p.max_leaves {
                leaf_rows.push((c.node, c.rows));
                continue;
            }
            let SplitChoice { feature, threshold, .. } = c.split;
            let (l, r): (Vec<usize>, Vec<usize>) = c.rows.iter().partition(|&&i| self.x.row(i)[feature] <= threshold);
            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[c.node] = Node::Split { feature, threshold, left: li, right: ri };
            leaves += 1;
            for (node, child) in [(li, l), (ri, r)] {
                let split = if c.depth + 1 < p.max_depth { self.best_split(&child) } else { None };
                match split {
                    Some(split) => heap.push(Candidate { node, depth: c.depth + 1, rows: child, split }),
                    None => leaf_rows.push((node, child)),
                }
            }
        }
        for (node, rows) in leaf_rows {
            nodes[node] = Node::Leaf { value: self.leaf_value(&rows) };
        }
        Tree { nodes }
    }
}

/// Second-order boosting of depth- and leaf-limited trees on logistic loss.
/// Single-class labels give a constant model at the (clamped) base rate.
pub fn train_gbdt(x: &FeatureMatrix, y: &[bool], params: &GbdtParams) -> Result<GbdtModel, BaselineError> {
    params.validate()?;
    if x.rows != y.len() || x.rows == 0 {
        return Err(BaselineError::Contract(format!("{} rows with {} labels", x.rows, y.len())));
    }
    if let Some(i) = x.data.iter().position(|v| !v.is_finite()) {
        return Err(BaselineError::Contract(format!("non-finite feature at row {}", i / x.cols().max(1))));
    }
    let n = x.rows;
    let rate = (y.iter().filter(|&&l| l).count() as f64 / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = (rate / (1.0 - rate)).ln();
    let mut model = GbdtModel { trees: Vec::new(), learning_rate: params.learning_rate, base_score, n_features: x.cols() };
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Ok(model);
    }
    let csr: Vec<Vec<(usize, f64)>> =
        (0..n).map(|i| x.row(i).iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(f, &v)| (f, v)).collect()).collect();
    let mut raw = vec![base_score; n];
    let (mut g, mut h) = (vec![0.0; n], vec![0.0; n]);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_rows = ((params.subsample * n as f64).floor() as usize).clamp(1, n);
    let n_cols = ((params.colsample * x.cols() as f64).ceil() as usize).clamp(1, x.cols().max(1));
    let mut buckets = vec![Vec::new(); x.cols()];
    for _ in 0..params.n_trees {
        for i in 0..n {
            let p = sigmoid(raw[i]);
            g[i] = p - if y[i] { 1.0 } else { 0.0 };
            h[i] = p * (1.0 - p);
        }
        let mut rows: Vec<usize> = if n_rows < n { sample(&mut rng, n, n_rows).into_vec() } else { (0..n).collect() };
        rows.sort_unstable();
        let mut allowed = vec![n_cols >= x.cols(); x.cols()];
        if n_cols < x.cols() {
            for f in sample(&mut rng, x.cols(), n_cols) {
                allowed[f] = true;
            }
        }
        let mut b = Builder { x, csr: &csr, g: &g, h: &h, params, allowed, buckets: std::mem::take(&mut buckets), touched: Vec::new() };
        let tree = b.grow(rows);
        buckets = b.buckets;
        for (i, r) in raw.iter_mut().enumerate() {
            *r += tree.predict(x.row(i));
        }
        model.trees.push(tree);
    }
    Ok(model)
}
