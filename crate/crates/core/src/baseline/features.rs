use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::BaselineError;
use crate::claimsgen::CodeSystem;
use crate::corpus::{TokenType, Vocabulary, MALE};
use crate::finetune::LabeledExample;

/// Dense row-major matrix: per-diagnosis counts, per-medication counts, sex
/// (1 = male) and age in days at the index date.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub rows: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, BaselineError> {
        let c = names.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != c) {
            return Err(BaselineError::Contract(format!("row {bad} has {} values for {c} columns", rows[bad].len())));
        }
        Ok(Self { names, rows: rows.len(), data: rows.concat() })
    }

    /// Subset of rows in the given order.
    pub fn select(&self, idx: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix { names: self.names.clone(), rows: idx.len(), data }
    }

    pub fn column_names(vocab: &Vocabulary) -> Vec<String> {
        let mut names: Vec<String> = vocab.codes(CodeSystem::Diagnosis).iter().map(|c| format!("icd10:{c}")).collect();
        names.extend(vocab.codes(CodeSystem::Medication).iter().map(|c| format!("yj:{c}")));
        names.push("sex_male".into());
        names.push("age_days".into());
        names
    }
}

/// Code counts over the whole pre-index history, then sex and index age.
/// Event order does not matter.
pub fn featurize(example: &LabeledExample, vocab: &Vocabulary) -> Vec<f64> {
    let (nd, nm) = (vocab.n_diag(), vocab.n_med());
    let mut row = vec![0.0; nd + nm + 2];
    let seq = &example.input;
    for (i, &id) in seq.token_ids.iter().enumerate() {
        match seq.tags[i] {
            TokenType::Diagnosis => row[id as usize] += 1.0,
            TokenType::Medication => row[nd + id as usize] += 1.0,
            TokenType::Special => {}
        }
    }
    row[nd + nm] = if seq.token_ids.get(1) == Some(&MALE) { 1.0 } else { 0.0 };
    row[nd + nm + 1] = f64::from(example.index_age);
    row
}

pub fn featurize_all(examples: &[LabeledExample], vocab: &Vocabulary) -> FeatureMatrix {
    let names = FeatureMatrix::column_names(vocab);
    let mut data = Vec::with_capacity(examples.len() * names.len());
    for e in examples {
        data.extend(featurize(e, vocab));
    }
    FeatureMatrix { names, rows: examples.len(), data }
}

const MAGIC: &[u8; 8] = b"MSFEAT01";

/// Header (magic, rows, cols, JSON column names) followed by row-major f64 values.
pub fn write_feature_matrix(path: &Path, m: &FeatureMatrix) -> Result<(), BaselineError> {
    let mut w = BufWriter::new(File::create(path)?);
    let names = serde_json::to_vec(&m.names)?;
    w.write_all(MAGIC)?;
    for n in [m.rows as u64, m.cols() as u64, names.len() as u64] {
        w.write_all(&n.to_le_bytes())?;
    }
    w.write_all(&names)?;
    for v in &m.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_matrix(path: &Path) -> Result<FeatureMatrix, BaselineError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(BaselineError::Format("not a feature matrix file".into()));
    }
    let mut u64s = [0u64; 3];
    for v in &mut u64s {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        *v = u64::from_le_bytes(b);
    }
    let [rows, cols, name_len] = u64s.map(|v| v as usize);
    let mut names = vec![0u8; name_len];
    r.read_exact(&mut names)?;
    let names: Vec<String> = serde_json::from_slice(&names)?;
    if names.len() != cols {
        return Err(BaselineError::Format(format!("{} column names for {cols} columns", names.len())));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != rows * cols * 8 {
        return Err(BaselineError::Format(format!("expected {} values, found {} bytes", rows * cols, bytes.len())));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok(FeatureMatrix { names, rows, data })
}
