use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FinetuneError;
use crate::claimsgen::{CodeSystem, PatientRecord};
use crate::corpus::{build_sequence, Partition, SplitAssignment, TokenSequence, Vocabulary};

pub const HORIZON_DAYS: u32 = 365;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Disease,
    Medication,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// Diagnosis code, or the seven-digit medication class.
    pub target_code: String,
    pub system: CodeSystem,
    #[serde(default = "default_horizon")]
    pub horizon_days: u32,
    pub kind: TaskKind,
}

fn default_horizon() -> u32 {
    HORIZON_DAYS
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, target_code: impl Into<String>, system: CodeSystem) -> Self {
        let kind = match system {
            CodeSystem::Diagnosis => TaskKind::Disease,
            CodeSystem::Medication => TaskKind::Medication,
        };
        Self { name: name.into(), target_code: target_code.into(), system, horizon_days: HORIZON_DAYS, kind }
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), FinetuneError> {
        if vocab.id(self.system, &self.target_code).is_none() {
            return Err(FinetuneError::Config(format!(
                "task {}: target {} code {:?} is not in the vocabulary",
                self.name,
                self.system.tag(),
                self.target_code
            )));
        }
        if self.horizon_days == 0 {
            return Err(FinetuneError::Config(format!("task {}: horizon must be positive", self.name)));
        }
        Ok(())
    }

    fn is_target(&self, system: CodeSystem, code: &str) -> bool {
        system == self.system && code == self.target_code
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub patient_id: String,
    /// In-vocabulary history strictly before `index_age`, untruncated; models
    /// with a shorter context see only the most recent events.
    pub input: TokenSequence,
    pub label: bool,
    pub index_age: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Cohort {
    pub positives: Vec<LabeledExample>,
    pub negatives: Vec<LabeledExample>,
}

impl Cohort {
    /// Members assigned to `partition`.
    pub fn restrict(&self, split: &SplitAssignment, partition: Partition) -> Cohort {
        let keep = |v: &[LabeledExample]| v.iter().filter(|e| split.partition_of(&e.patient_id) == Some(partition)).cloned().collect();
        Cohort { positives: keep(&self.positives), negatives: keep(&self.negatives) }
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Positives then negatives.
    pub fn all(&self) -> Vec<LabeledExample> {
        self.positives.iter().chain(&self.negatives).cloned().collect()
    }
}

/// Label and index date for one patient, or `None` when ineligible.
///
/// Positive: the first target event comes at least a horizon after the first
/// record; the index is that event's age. Negative: no target event ever and
/// at least a horizon of observation; the index is the last age minus the horizon.
pub fn label_of(record: &PatientRecord, task: &TaskSpec) -> Option<(bool, u32)> {
    let first = record.first_age()?;
    match record.events.iter().find(|e| task.is_target(e.system, &e.code)) {
        Some(hit) => (hit.age_days - first >= task.horizon_days).then_some((true, hit.age_days)),
        None => {
            let last = record.last_age()?;
            (last - first >= task.horizon_days).then(|| (false, last - task.horizon_days))
        }
    }
}

/// Labeled examples for every eligible patient, each carrying its whole
/// in-vocabulary pre-index history; patients with fewer than two such events
/// are dropped.
pub fn extract_cohort(records: &[PatientRecord], vocab: &Vocabulary, task: &TaskSpec) -> Result<Cohort, FinetuneError> {
    task.validate(vocab)?;
    let mut cohort = Cohort::default();
    for r in records {
        let Some((label, index_age)) = label_of(r, task) else { continue };
        let mut history = r.clone();
        history.events.retain(|e| e.age_days < index_age);
        let Some(seq) = build_sequence(&history, vocab) else { continue };
        let example = LabeledExample { patient_id: r.patient_id.clone(), input: seq, label, index_age };
        if label {
            cohort.positives.push(example);
        } else {
            cohort.negatives.push(example);
        }
    }
    Ok(cohort)
}

/// `n/2` positives and `n/2` negatives drawn without replacement, shuffled together.
pub fn sample_balanced(pos: &[LabeledExample], neg: &[LabeledExample], n: usize, seed: u64) -> Result<Vec<LabeledExample>, FinetuneError> {
    if n == 0 || n % 2 == 1 {
        return Err(FinetuneError::Contract(format!("balanced sample size must be even and positive, got {n}")));
    }
    let half = n / 2;
    for (class, pool) in [("positive", pos), ("negative", neg)] {
        if pool.len() < half {
            return Err(FinetuneError::Shortfall { class, needed: half, available: pool.len() });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<LabeledExample> = Vec::with_capacity(n);
    out.extend(pos.choose_multiple(&mut rng, half).cloned());
    out.extend(neg.choose_multiple(&mut rng, half).cloned());
    out.shuffle(&mut rng);
    Ok(out)
}
