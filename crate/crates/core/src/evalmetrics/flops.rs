use serde::{Deserialize, Serialize};

use crate::encoder::ModelConfig;

/// Forward multiply-accumulate counts for one batch, split by term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlopsTerms {
    /// Age projection PLE(z)·W_age; table lookups are free.
    pub embedding: f64,
    /// Q, K, V and output projections over all layers.
    pub projections: f64,
    /// QKᵀ score matrices.
    pub attention_scores: f64,
    /// Softmax(scores)·V.
    pub attention_context: f64,
    pub ffn: f64,
    /// Diagnosis, medication and age heads at every position.
    pub heads: f64,
}

impl FlopsTerms {
    pub fn total(&self) -> f64 {
        self.embedding + self.projections + self.attention_scores + self.attention_context + self.ffn + self.heads
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub d: usize,
    pub seq_len: usize,
    pub batch: usize,
    pub terms: FlopsTerms,
    pub forward_macs: f64,
    /// Forward multiply-accumulates in units of 10⁹ — the figure comparable to
    /// published per-size GFLOPs tables.
    pub gflops: f64,
    /// Forward + backward at 2 FLOPs per MAC with backward = 2× forward (6 × MACs).
    pub train_flops: f64,
}

/// Closed-form operation count for a full forward pass over `batch`
/// sequences of `seq_len` tokens.
pub fn estimate_flops(cfg: &ModelConfig, seq_len: usize, batch: usize, n_diag: usize, n_med: usize) -> FlopsReport {
    let (n, d, f, l) = (seq_len as f64, cfg.d as f64, cfg.ffn() as f64, cfg.layers as f64);
    let b = batch as f64;
    let terms = FlopsTerms {
        embedding: b * n * d * d,
        projections: b * l * 4.0 * n * d * d,
        attention_scores: b * l * n * n * d,
        attention_context: b * l * n * n * d,
        ffn: b * l * 2.0 * n * d * f,
        heads: b * n * d * (n_diag + n_med + 1) as f64,
    };
    let macs = terms.total();
    FlopsReport { d: cfg.d, seq_len, batch, terms, forward_macs: macs, gflops: macs / 1e9, train_flops: 6.0 * macs }
}
