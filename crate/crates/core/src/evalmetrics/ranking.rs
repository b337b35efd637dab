use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{0} scores but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Index order by descending score (stable), grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Area under the ROC curve via the Mann–Whitney statistic with midranks,
/// i.e. P(s⁺ > s⁻) + ½ P(s⁺ = s⁻).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(MetricError::Undefined("AUROC needs both classes"));
    }
    // Ascending ranks: walk groups from the lowest score upwards.
    let mut rank_sum = 0.0;
    let mut below = 0usize;
    for g in tie_groups(scores).iter().rev() {
        let mid = below as f64 + (g.len() as f64 + 1.0) / 2.0;
        rank_sum += mid * g.iter().filter(|&&i| labels[i]).count() as f64;
        below += g.len();
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Step-wise average precision. Within a group of tied scores the result is
/// the exact expectation over all orderings of that group.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(MetricError::Undefined("AUPRC needs at least one positive"));
    }
    let (mut seen, mut tp, mut total) = (0usize, 0usize, 0.0);
    for g in tie_groups(scores) {
        let n = g.len();
        let p = g.iter().filter(|&&i| labels[i]).count();
        if p > 0 {
            // Position j in the group holds a positive with probability p/n; given
            // that, the other j-1 slots hold (j-1)(p-1)/(n-1) positives on average.
            let pf = p as f64;
            for j in 1..=n {
                let others = if n > 1 { (j - 1) as f64 * (pf - 1.0) / (n - 1) as f64 } else { 0.0 };
                total += pf / n as f64 * (tp as f64 + 1.0 + others) / (seen + j) as f64;
            }
        }
        seen += n;
        tp += p;
    }
    Ok(total / pos as f64)
}
