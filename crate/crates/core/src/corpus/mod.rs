//! Vocabulary, code normalization, token sequences and the patient split.

mod split;
mod vocab;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claimsgen::{CodeSystem, PatientRecord, Sex};

pub use split::{split_patients, Partition, SplitAssignment, DEFAULT_RATIOS};
pub use vocab::{build_vocab, default_min_count, Vocabulary, CLS, FEMALE, MALE, MASK, PAD, SPECIAL_TOKENS};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid code {code:?}: {reason}")]
    Validation { code: String, reason: &'static str },
    #[error("invalid split ratios: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub const MED_CLASS_DIGITS: usize = 7;

/// Keeps the first seven digits of a YJ code, i.e. its pharmacological class.
pub fn truncate_med_code(code: &str) -> Result<String, CorpusError> {
    if code.len() < MED_CLASS_DIGITS || !code.bytes().all(|b| b.is_ascii_alphanumeric()) {
        return Err(CorpusError::Validation { code: code.to_string(), reason: "medication codes need at least 7 characters" });
    }
    if !code.as_bytes()[..MED_CLASS_DIGITS].iter().all(u8::is_ascii_digit) {
        return Err(CorpusError::Validation { code: code.to_string(), reason: "class prefix must be numeric" });
    }
    Ok(code[..MED_CLASS_DIGITS].to_string())
}

/// Truncates every medication code to its class; diagnoses pass through.
pub fn normalize_records(records: &[PatientRecord]) -> Result<Vec<PatientRecord>, CorpusError> {
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            for e in &mut r.events {
                if e.system == CodeSystem::Medication {
                    e.code = truncate_med_code(&e.code)?;
                }
            }
            Ok(r)
        })
        .collect()
}

/// Type tag `c` of a position: special tokens, diagnoses, medications.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum TokenType {
    Special = 0,
    Diagnosis = 1,
    Medication = 2,
}

impl TokenType {
    pub fn is_clinical(self) -> bool {
        self != TokenType::Special
    }
}

impl From<CodeSystem> for TokenType {
    fn from(s: CodeSystem) -> Self {
        match s {
            CodeSystem::Diagnosis => TokenType::Diagnosis,
            CodeSystem::Medication => TokenType::Medication,
        }
    }
}

/// Age placeholder for the [CLS] and sex positions.
pub const NO_AGE: u32 = u32::MAX;

/// `[CLS]`, sex token, then chronologically ordered clinical tokens. Ids are
/// indices into the table selected by the position's tag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub patient_id: String,
    pub token_ids: Vec<u32>,
    pub tags: Vec<TokenType>,
    pub ages: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn clinical_len(&self) -> usize {
        self.len().saturating_sub(2)
    }

    /// Checks the positional structure: special prefix, valid tags, sorted ages.
    pub fn is_well_formed(&self) -> bool {
        let n = self.len();
        n >= 2
            && self.tags.len() == n
            && self.ages.len() == n
            && self.tags[0] == TokenType::Special
            && self.token_ids[0] == vocab::CLS
            && self.tags[1] == TokenType::Special
            && (self.token_ids[1] == vocab::MALE || self.token_ids[1] == vocab::FEMALE)
            && self.tags[2..].iter().all(|t| t.is_clinical())
            && self.ages[2..].windows(2).all(|w| w[0] <= w[1])
    }
}

/// Builds the token sequence for one patient. Out-of-vocabulary events are
/// dropped first; `None` means fewer than two events remain and the patient is
/// excluded from the cohort.
pub fn build_sequence(patient: &PatientRecord, vocab: &Vocabulary) -> Option<TokenSequence> {
    let mut events: Vec<(u32, TokenType, u32)> = patient
        .events
        .iter()
        .filter_map(|e| vocab.id(e.system, &e.code).map(|id| (id, TokenType::from(e.system), e.age_days)))
        .collect();
    if events.len() < 2 {
        return None;
    }
    events.sort_by_key(|&(_, _, age)| age);
    let sex = match patient.sex {
        Sex::M => vocab::MALE,
        Sex::F => vocab::FEMALE,
    };
    let n = events.len() + 2;
    let mut seq = TokenSequence {
        patient_id: patient.patient_id.clone(),
        token_ids: Vec::with_capacity(n),
        tags: Vec::with_capacity(n),
        ages: Vec::with_capacity(n),
    };
    for (id, tag, age) in [(vocab::CLS, TokenType::Special, NO_AGE), (sex, TokenType::Special, NO_AGE)].into_iter().chain(events) {
        seq.token_ids.push(id);
        seq.tags.push(tag);
        seq.ages.push(age);
    }
    Some(seq)
}

/// Keeps the earliest `max_len` positions.
pub fn truncate_sequence(seq: &TokenSequence, max_len: usize) -> Result<TokenSequence, CorpusError> {
    if max_len < 3 {
        return Err(CorpusError::Contract(format!("max_len must be at least 3, got {max_len}")));
    }
    let n = seq.len().min(max_len);
    Ok(TokenSequence {
        patient_id: seq.patient_id.clone(),
        token_ids: seq.token_ids[..n].to_vec(),
        tags: seq.tags[..n].to_vec(),
        ages: seq.ages[..n].to_vec(),
    })
}

/// Keeps `[CLS]`, sex and the most recent `max_len - 2` events.
pub fn truncate_recent(seq: &TokenSequence, max_len: usize) -> Result<TokenSequence, CorpusError> {
    if max_len < 3 {
        return Err(CorpusError::Contract(format!("max_len must be at least 3, got {max_len}")));
    }
    let mut out = seq.clone();
    let excess = seq.len().saturating_sub(max_len);
    if excess > 0 {
        out.token_ids.drain(2..2 + excess);
        out.tags.drain(2..2 + excess);
        out.ages.drain(2..2 + excess);
    }
    Ok(out)
}

/// Cache key for built sequences: `(corpus hash, vocab hash, max_len)`.
pub fn sequence_cache_key(corpus_hash: &str, vocab_hash: &str, max_len: usize) -> String {
    format!("{corpus_hash}:{vocab_hash}:{max_len}")
}

/// Writes sequences as JSONL behind a key header line.
pub fn save_sequences(path: &Path, key: &str, seqs: &[TokenSequence]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, key)?;
    w.write_all(b"\n")?;
    for s in seqs {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a cache written by [`save_sequences`]; `None` when it is missing or
/// was built under another key.
pub fn load_sequences(path: &Path, key: &str) -> Result<Option<Vec<TokenSequence>>, CorpusError> {
    let Ok(f) = File::open(path) else { return Ok(None) };
    let mut lines = BufReader::new(f).lines();
    let Some(header) = lines.next() else { return Ok(None) };
    if serde_json::from_str::<String>(&header?)? != key {
        return Ok(None);
    }
    let mut out = Vec::new();
    for line in lines {
        out.push(serde_json::from_str(&line?)?);
    }
    Ok(Some(out))
}

/// SHA-256 over the canonical JSONL form of a cohort.
pub fn corpus_hash(records: &[PatientRecord]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for r in records {
        h.update(serde_json::to_vec(r).expect("records serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}
