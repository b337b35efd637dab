//! Glue from raw claims to model-ready partitions.

use crate::claimsgen::PatientRecord;
use crate::corpus::{
    build_sequence, build_vocab, default_min_count, normalize_records, split_patients, truncate_sequence, CorpusError, Partition,
    SplitAssignment, TokenSequence, Vocabulary, DEFAULT_RATIOS,
};
use crate::embed::{clinical_ages, fit_ple, AgeStandardizer, EmbedError, PLEncoder};
use crate::encoder::{EncoderError, EncoderModel, ModelConfig};
use crate::Scalar;

/// Normalized records, vocabulary, split and per-partition token sequences,
/// with the age standardizer fitted on the pretraining partition.
#[derive(Clone, Debug)]
pub struct PreparedCorpus {
    pub records: Vec<PatientRecord>,
    pub vocab: Vocabulary,
    pub split: SplitAssignment,
    pub sequences: [Vec<TokenSequence>; 4],
    pub standardizer: AgeStandardizer,
    pub max_len: usize,
}

impl PreparedCorpus {
    /// `min_count = None` uses the corpus-size-scaled default. Patients with
    /// fewer than two in-vocabulary events are excluded from the sequences
    /// but keep their split assignment.
    pub fn build(records: &[PatientRecord], min_count: Option<u64>, max_len: usize, split_seed: u64) -> Result<Self, CorpusError> {
        let records = normalize_records(records)?;
        let total_events = records.iter().map(|r| r.events.len()).sum();
        let vocab = build_vocab(&records, min_count.unwrap_or_else(|| default_min_count(total_events)));
        let ids: Vec<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
        let split = split_patients(&ids, DEFAULT_RATIOS, split_seed)?;
        let mut sequences: [Vec<TokenSequence>; 4] = Default::default();
        for r in &records {
            if let Some(s) = build_sequence(r, &vocab) {
                let p = split.partition_of(&r.patient_id).expect("every record is assigned");
                sequences[p as usize].push(truncate_sequence(&s, max_len)?);
            }
        }
        if sequences[Partition::Pretrain as usize].is_empty() {
            return Err(CorpusError::Contract("no eligible patients in the pretraining partition".into()));
        }
        let standardizer = AgeStandardizer::fit_sequences(&sequences[Partition::Pretrain as usize])
            .map_err(|e| CorpusError::Contract(e.to_string()))?;
        Ok(Self { records, vocab, split, sequences, standardizer, max_len })
    }

    pub fn partition(&self, p: Partition) -> &[TokenSequence] {
        &self.sequences[p as usize]
    }

    /// PLE of width `d` on standardized pretraining ages.
    pub fn fit_ple(&self, d: usize) -> Result<PLEncoder, EmbedError> {
        let z: Vec<f64> = clinical_ages(self.partition(Partition::Pretrain)).iter().map(|&a| self.standardizer.apply(a)).collect();
        fit_ple(&z, d)
    }

    /// Freshly initialised model for this corpus.
    pub fn new_model<T: Scalar>(&self, config: ModelConfig) -> Result<EncoderModel<T>, EncoderError> {
        let ple = self.fit_ple(config.d)?;
        EncoderModel::new(config, &self.vocab, ple, self.standardizer)
    }
}
