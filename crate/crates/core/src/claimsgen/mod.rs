//! Synthetic claims records: a calibrated generator, a JSONL reader/writer and
//! cohort summary statistics.

mod generator;
mod jsonl;
mod summary;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generator::{generate_cohort, generate_patient, CodeWorld, GeneratedPatient, GeneratorConfig, Onset};
pub use jsonl::{parse_claims, read_claims, write_claims, write_claims_file};
pub use summary::{summarize, CohortStats};

#[derive(Debug, Error)]
pub enum ClaimsError {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

/// Coding system of an event: ICD-10 diagnoses or YJ drug codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CodeSystem {
    #[serde(rename = "icd10")]
    Diagnosis,
    #[serde(rename = "yj")]
    Medication,
}

impl CodeSystem {
    pub fn tag(self) -> &'static str {
        match self {
            CodeSystem::Diagnosis => "icd10",
            CodeSystem::Medication => "yj",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "icd10" => Some(CodeSystem::Diagnosis),
            "yj" => Some(CodeSystem::Medication),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventRecord {
    pub code: String,
    pub system: CodeSystem,
    pub age_days: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub sex: Sex,
    /// Nondecreasing in `age_days`.
    pub events: Vec<EventRecord>,
}

impl PatientRecord {
    pub fn first_age(&self) -> Option<u32> {
        self.events.first().map(|e| e.age_days)
    }

    pub fn last_age(&self) -> Option<u32> {
        self.events.last().map(|e| e.age_days)
    }

    /// Days between the first and last recorded event.
    pub fn observation_days(&self) -> u32 {
        match (self.first_age(), self.last_age()) {
            (Some(a), Some(b)) => b - a,
            _ => 0,
        }
    }

    /// Stable sort by age, keeping same-day events in their given order.
    pub fn sort_events(&mut self) {
        self.events.sort_by_key(|e| e.age_days);
    }
}

/// Letter followed by 2–4 ASCII alphanumerics.
pub fn is_icd10_shaped(code: &str) -> bool {
    let b = code.as_bytes();
    (3..=5).contains(&b.len()) && b[0].is_ascii_uppercase() && b[1..].iter().all(u8::is_ascii_alphanumeric)
}

/// Numeric string of 7–12 digits.
pub fn is_yj_shaped(code: &str) -> bool {
    (7..=12).contains(&code.len()) && code.bytes().all(|c| c.is_ascii_digit())
}
