use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{ClaimsError, CodeSystem, PatientRecord, Sex};
use crate::stats::Quartiles;

/// Cohort-level summary in median [IQR] form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub patients: usize,
    pub sequence_length: Quartiles,
    pub unique_timestamps: Quartiles,
    pub observation_days: Quartiles,
    pub age_at_first_record_days: Quartiles,
    pub male_fraction: f64,
    pub distinct_diag_codes: usize,
    pub distinct_med_codes: usize,
}

pub fn summarize(records: &[PatientRecord]) -> Result<CohortStats, ClaimsError> {
    if records.is_empty() {
        return Err(ClaimsError::Contract("cannot summarize an empty cohort".into()));
    }
    let q = |f: &dyn Fn(&PatientRecord) -> f64| Quartiles::of(records.iter().map(f)).expect("nonempty");
    let mut diag = HashSet::new();
    let mut med = HashSet::new();
    for e in records.iter().flat_map(|r| &r.events) {
        match e.system {
            CodeSystem::Diagnosis => diag.insert(e.code.as_str()),
            CodeSystem::Medication => med.insert(e.code.as_str()),
        };
    }
    let with_events: Vec<f64> = records.iter().filter_map(|r| r.first_age()).map(f64::from).collect();
    Ok(CohortStats {
        patients: records.len(),
        sequence_length: q(&|r| r.events.len() as f64),
        unique_timestamps: q(&|r| {
            let mut ages: Vec<u32> = r.events.iter().map(|e| e.age_days).collect();
            ages.dedup();
            ages.len() as f64
        }),
        observation_days: q(&|r| r.observation_days() as f64),
        age_at_first_record_days: Quartiles::of(with_events).unwrap_or(Quartiles { q1: 0.0, median: 0.0, q3: 0.0 }),
        male_fraction: records.iter().filter(|r| r.sex == Sex::M).count() as f64 / records.len() as f64,
        distinct_diag_codes: diag.len(),
        distinct_med_codes: med.len(),
    })
}
