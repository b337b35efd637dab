use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Pretrain,
    Validation,
    Test,
    Finetune,
}

impl Partition {
    pub const ALL: [Partition; 4] = [Partition::Pretrain, Partition::Validation, Partition::Test, Partition::Finetune];
}

pub const DEFAULT_RATIOS: [f64; 4] = [0.7, 0.1, 0.1, 0.1];

/// Disjoint, exhaustive assignment of patient ids to partitions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    members: [Vec<String>; 4],
    lookup: HashMap<String, Partition>,
}

impl SplitAssignment {
    pub fn partition_of(&self, id: &str) -> Option<Partition> {
        self.lookup.get(id).copied()
    }

    /// Ids of one partition in shuffled order.
    pub fn ids(&self, p: Partition) -> &[String] {
        &self.members[p as usize]
    }

    pub fn len(&self) -> usize {
        self.lookup.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lookup.is_empty()
    }
}

/// Seeded shuffle followed by contiguous assignment in
/// pretrain/validation/test/finetune order. Sizes use largest-remainder
/// rounding, so each partition is within one id of `ratio · n`; ties in the
/// remainder favour pretraining.
pub fn split_patients<S: AsRef<str>>(ids: &[S], ratios: [f64; 4], seed: u64) -> Result<SplitAssignment, CorpusError> {
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 || ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(CorpusError::Config(format!("ratios {ratios:?} must be probabilities summing to 1")));
    }
    let n = ids.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let sizes = apportion(n, ratios);
    let mut members: [Vec<String>; 4] = Default::default();
    let mut lookup = HashMap::with_capacity(n);
    let mut it = order.into_iter();
    for (p, &size) in Partition::ALL.iter().zip(&sizes) {
        for i in it.by_ref().take(size) {
            let id = ids[i].as_ref().to_string();
            members[*p as usize].push(id.clone());
            lookup.insert(id, *p);
        }
    }
    if lookup.len() != n {
        return Err(CorpusError::Contract("patient ids must be unique".into()));
    }
    Ok(SplitAssignment { members, lookup })
}

fn apportion(n: usize, ratios: [f64; 4]) -> [usize; 4] {
    let exact = ratios.map(|r| r * n as f64);
    let mut sizes = exact.map(|x| (x + 1e-9).floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order = [0, 1, 2, 3];
    let frac = |i: usize| exact[i] - sizes[i] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}
