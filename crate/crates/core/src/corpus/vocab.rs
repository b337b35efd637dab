use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CorpusError, TokenType};
use crate::claimsgen::{CodeSystem, PatientRecord};

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[CLS]", "[M]", "[F]", "[MASK]"];
pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const MALE: u32 = 2;
pub const FEMALE: u32 = 3;
pub const MASK: u32 = 4;

/// Default frequency threshold for synthetic cohorts: scales with corpus size.
pub fn default_min_count(total_events: usize) -> u64 {
    ((total_events as f64 * 5e-5).ceil() as u64).max(2)
}

/// Three disjoint id spaces: special tokens, diagnoses and medications. Code
/// ids are dense and follow lexicographic code order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    min_count: u64,
    diag: Vec<String>,
    diag_counts: Vec<u64>,
    med: Vec<String>,
    med_counts: Vec<u64>,
    diag_index: HashMap<String, u32>,
    med_index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    special: Vec<String>,
    min_count: u64,
    diag: BTreeMap<String, u64>,
    med: BTreeMap<String, u64>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        Vocabulary::from_counts(f.min_count, f.diag, f.med)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            special: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
            min_count: v.min_count,
            diag: v.diag.into_iter().zip(v.diag_counts).collect(),
            med: v.med.into_iter().zip(v.med_counts).collect(),
        }
    }
}

impl Vocabulary {
    fn from_counts(min_count: u64, diag: BTreeMap<String, u64>, med: BTreeMap<String, u64>) -> Self {
        let index = |codes: &[String]| codes.iter().enumerate().map(|(i, c)| (c.clone(), i as u32)).collect();
        let (diag, diag_counts): (Vec<_>, Vec<_>) = diag.into_iter().unzip();
        let (med, med_counts): (Vec<_>, Vec<_>) = med.into_iter().unzip();
        Self { min_count, diag_index: index(&diag), med_index: index(&med), diag, diag_counts, med, med_counts }
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn n_special(&self) -> usize {
        SPECIAL_TOKENS.len()
    }

    pub fn n_diag(&self) -> usize {
        self.diag.len()
    }

    pub fn n_med(&self) -> usize {
        self.med.len()
    }

    /// Size of the table addressed by `tag`.
    pub fn table_size(&self, tag: TokenType) -> usize {
        match tag {
            TokenType::Special => self.n_special(),
            TokenType::Diagnosis => self.n_diag(),
            TokenType::Medication => self.n_med(),
        }
    }

    pub fn id(&self, system: CodeSystem, code: &str) -> Option<u32> {
        match system {
            CodeSystem::Diagnosis => self.diag_index.get(code).copied(),
            CodeSystem::Medication => self.med_index.get(code).copied(),
        }
    }

    pub fn code(&self, system: CodeSystem, id: u32) -> Option<&str> {
        let codes = match system {
            CodeSystem::Diagnosis => &self.diag,
            CodeSystem::Medication => &self.med,
        };
        codes.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, system: CodeSystem, code: &str) -> Option<u64> {
        let id = self.id(system, code)? as usize;
        Some(match system {
            CodeSystem::Diagnosis => self.diag_counts[id],
            CodeSystem::Medication => self.med_counts[id],
        })
    }

    pub fn codes(&self, system: CodeSystem) -> &[String] {
        match system {
            CodeSystem::Diagnosis => &self.diag,
            CodeSystem::Medication => &self.med,
        }
    }

    pub fn to_json(&self) -> Result<String, CorpusError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, CorpusError> {
        Ok(serde_json::from_str(s)?)
    }

    /// SHA-256 of the serialized vocabulary.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("vocabulary serializes")))
    }
}

type Counts = (HashMap<String, u64>, HashMap<String, u64>);

/// Counts normalized codes and keeps those seen at least `min_count` times.
pub fn build_vocab(records: &[PatientRecord], min_count: u64) -> Vocabulary {
    let (diag, med): Counts = records
        .par_iter()
        .fold(Counts::default, |(mut d, mut m), r| {
            for e in &r.events {
                let map = if e.system == CodeSystem::Diagnosis { &mut d } else { &mut m };
                *map.entry(e.code.clone()).or_default() += 1;
            }
            (d, m)
        })
        .reduce(Counts::default, |(mut d1, mut m1), (d2, m2)| {
            for (k, v) in d2 {
                *d1.entry(k).or_default() += v;
            }
            for (k, v) in m2 {
                *m1.entry(k).or_default() += v;
            }
            (d1, m1)
        });
    let keep = |m: HashMap<String, u64>| m.into_iter().filter(|&(_, c)| c >= min_count).collect::<BTreeMap<_, _>>();
    Vocabulary::from_counts(min_count, keep(diag), keep(med))
}
