use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use super::{ClaimsError, CodeSystem, EventRecord, PatientRecord, Sex};

#[derive(Deserialize)]
struct RawEvent {
    code: String,
    system: String,
    age_days: i64,
}

#[derive(Deserialize)]
struct RawPatient {
    patient_id: String,
    sex: Sex,
    events: Vec<RawEvent>,
}

fn validate(raw: RawPatient, line: usize) -> Result<PatientRecord, ClaimsError> {
    let invalid = |message: String| ClaimsError::Validation { line, message };
    let mut events = Vec::with_capacity(raw.events.len());
    for e in raw.events {
        let system = CodeSystem::from_tag(&e.system).ok_or_else(|| invalid(format!("unknown system tag {:?}", e.system)))?;
        if e.age_days < 0 {
            return Err(invalid(format!("negative age_days {} for code {}", e.age_days, e.code)));
        }
        let age_days = u32::try_from(e.age_days).map_err(|_| invalid(format!("age_days {} out of range", e.age_days)))?;
        events.push(EventRecord { code: e.code, system, age_days });
    }
    let mut rec = PatientRecord { patient_id: raw.patient_id, sex: raw.sex, events };
    rec.sort_events();
    Ok(rec)
}

/// Parses one patient per line; blank lines are skipped and unknown fields ignored.
/// Line numbers in errors are 1-based.
pub fn parse_claims<R: BufRead>(reader: R) -> Result<Vec<PatientRecord>, ClaimsError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPatient =
            serde_json::from_str(&line).map_err(|e| ClaimsError::Parse { line: line_no, message: e.to_string() })?;
        out.push(validate(raw, line_no)?);
    }
    Ok(out)
}

pub fn read_claims(path: &Path) -> Result<Vec<PatientRecord>, ClaimsError> {
    parse_claims(BufReader::new(File::open(path)?))
}

/// Writes records as JSONL with keys in schema order.
pub fn write_claims<W: Write>(records: &[PatientRecord], mut w: W) -> Result<(), ClaimsError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_claims_file(records: &[PatientRecord], path: &Path) -> Result<(), ClaimsError> {
    write_claims(records, BufWriter::new(File::create(path)?))
}
