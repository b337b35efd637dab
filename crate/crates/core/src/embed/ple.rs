use serde::{Deserialize, Serialize};

use super::EmbedError;
use crate::stats::quantile_sorted;

/// Piecewise-linear encoder over quantile bin edges `b_0 ≤ … ≤ b_d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PLEncoder {
    edges: Vec<f64>,
}

impl PLEncoder {
    /// Encoder over explicit edges (at least two, nondecreasing, finite).
    pub fn from_edges(edges: Vec<f64>) -> Result<Self, EmbedError> {
        if edges.len() < 2 {
            return Err(EmbedError::Contract("need at least two edges".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(EmbedError::NonFinite("edge"));
        }
        if edges.windows(2).any(|w| w[0] > w[1]) {
            return Err(EmbedError::Contract("edges must be nondecreasing".into()));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Output width `d`.
    pub fn width(&self) -> usize {
        self.edges.len() - 1
    }

    /// Writes the `d` components for `a` into `out`.
    ///
    /// Inputs are clamped to `[b_0, b_d]`; `a = b_d` is all ones. A bin of
    /// zero width (tied quantiles) takes its left-limit step value: 1 when
    /// `a` lies strictly above the tied edge, else 0.
    pub fn encode_into(&self, a: f64, out: &mut [f64]) -> Result<(), EmbedError> {
        if a.is_nan() {
            return Err(EmbedError::NonFinite("age"));
        }
        let d = self.width();
        assert_eq!(out.len(), d, "output width mismatch");
        let last = self.edges[d];
        if a >= last {
            out.fill(1.0);
            return Ok(());
        }
        let a = a.max(self.edges[0]);
        for (k, o) in out.iter_mut().enumerate() {
            let (lo, hi) = (self.edges[k], self.edges[k + 1]);
            *o = if hi > lo {
                ((a - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else if a > lo {
                1.0
            } else {
                0.0
            };
        }
        Ok(())
    }

    pub fn encode(&self, a: f64) -> Result<Vec<f64>, EmbedError> {
        let mut out = vec![0.0; self.width()];
        self.encode_into(a, &mut out)?;
        Ok(out)
    }
}

/// Fits `d` bins whose edges are the `t/d` quantiles of the sample
/// (linear interpolation), with `b_0` = min and `b_d` = max.
///
/// A constant sample has no spread to bin; its edges are fanned out as
/// `min + t·ε/d` so encoding stays well defined and deterministic.
pub fn fit_ple(sample: &[f64], d: usize) -> Result<PLEncoder, EmbedError> {
    if sample.is_empty() {
        return Err(EmbedError::Contract("cannot fit PLE on an empty sample".into()));
    }
    if d == 0 {
        return Err(EmbedError::Contract("PLE width must be positive".into()));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(EmbedError::NonFinite("training age"));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let edges = if max > min {
        (0..=d).map(|t| quantile_sorted(&sorted, t as f64 / d as f64)).collect()
    } else {
        let eps = 1e-6 * min.abs().max(1.0);
        (0..=d).map(|t| min + t as f64 * eps / d as f64).collect()
    };
    PLEncoder::from_edges(edges)
}
