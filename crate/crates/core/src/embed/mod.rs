//! Input embeddings: type-routed code tables plus an affine piecewise-linear
//! encoding of standardized age.

mod ple;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TokenSequence, TokenType, Vocabulary, NO_AGE};
use crate::numcore::{BoundParams, NumError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::Scalar;

pub use ple::{fit_ple, PLEncoder};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

pub const INIT_STD: f64 = 0.02;

/// Normal(0, 0.02) tensor, deterministic per RNG state.
pub fn init_normal<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, INIT_STD).expect("valid std");
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::of(dist.sample(rng))).collect()).expect("shape matches")
}

/// z-score of age in days, fitted on the pretraining partition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgeStandardizer {
    pub mean: f64,
    pub std: f64,
}

impl AgeStandardizer {
    /// Fits on a sample; a zero spread falls back to unit scale.
    pub fn fit(ages: &[f64]) -> Result<Self, EmbedError> {
        if ages.is_empty() {
            return Err(EmbedError::Contract("cannot standardize an empty sample".into()));
        }
        let n = ages.len() as f64;
        let mean = ages.iter().sum::<f64>() / n;
        let var = ages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        if !(mean.is_finite() && std.is_finite()) {
            return Err(EmbedError::NonFinite("age"));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, age_days: f64) -> f64 {
        (age_days - self.mean) / self.std
    }

    /// Fits on every clinical age of the given sequences.
    pub fn fit_sequences(seqs: &[TokenSequence]) -> Result<Self, EmbedError> {
        Self::fit(&clinical_ages(seqs))
    }
}

pub fn clinical_ages(seqs: &[TokenSequence]) -> Vec<f64> {
    seqs.iter().flat_map(|s| s.ages[2..].iter().map(|&a| f64::from(a))).collect()
}

/// One input position after masking decisions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Slot {
    Special(u32),
    Clinical { tag: TokenType, id: u32, age_days: u32 },
}

impl Slot {
    pub fn from_sequence(seq: &TokenSequence) -> Vec<Slot> {
        (0..seq.len())
            .map(|i| match seq.tags[i] {
                TokenType::Special => Slot::Special(seq.token_ids[i]),
                tag => Slot::Clinical { tag, id: seq.token_ids[i], age_days: seq.ages[i] },
            })
            .collect()
    }
}

/// Handles of the embedding tables: `W_l`, `W_icd`, `W_yj`, the age
/// projection `W_age` and its bias. `W_age` acts on row vectors, so a
/// clinical position receives `PLE(z)·W_age + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStack {
    pub w_special: ParamId,
    pub w_diag: ParamId,
    pub w_med: ParamId,
    pub w_age: ParamId,
    pub b_age: ParamId,
    pub d: usize,
}

impl EmbeddingStack {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, vocab: &Vocabulary, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::init_sized(store, [vocab.n_special(), vocab.n_diag(), vocab.n_med()], d, rng)
    }

    /// Tables sized `[special, diag, med]`; empty vocabularies get one
    /// placeholder row so every table has a valid shape.
    pub fn init_sized<T: Scalar>(store: &mut ParamStore<T>, sizes: [usize; 3], d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w_special: store.add("embed.special", init_normal(&[sizes[0].max(1), d], rng)),
            w_diag: store.add("embed.diag", init_normal(&[sizes[1].max(1), d], rng)),
            w_med: store.add("embed.med", init_normal(&[sizes[2].max(1), d], rng)),
            w_age: store.add("embed.age_proj", init_normal(&[d, d], rng)),
            b_age: store.add("embed.age_bias", Tensor::zeros(&[d])),
            d,
        }
    }

    fn table(&self, tag: TokenType) -> ParamId {
        match tag {
            TokenType::Special => self.w_special,
            TokenType::Diagnosis => self.w_diag,
            TokenType::Medication => self.w_med,
        }
    }

    fn check_slot<T: Scalar>(&self, store: &ParamStore<T>, slot: &Slot) -> Result<(TokenType, usize), EmbedError> {
        let (tag, id) = match *slot {
            Slot::Special(id) => (TokenType::Special, id),
            Slot::Clinical { tag: TokenType::Special, .. } => {
                return Err(EmbedError::Contract("clinical slot carries the special tag".into()))
            }
            Slot::Clinical { tag, id, age_days } => {
                if age_days == NO_AGE {
                    return Err(EmbedError::Contract("clinical slot without an age".into()));
                }
                (tag, id)
            }
        };
        let rows = store.get(self.table(tag)).shape()[0];
        if id as usize >= rows {
            return Err(EmbedError::Contract(format!("id {id} outside the {tag:?} table of {rows} rows")));
        }
        Ok((tag, id as usize))
    }

    /// PLE rows for the clinical slots, in slot order.
    fn ple_matrix<T: Scalar>(slots: &[Slot], enc: &PLEncoder, std: &AgeStandardizer) -> Result<Option<Tensor<T>>, EmbedError> {
        let d = enc.width();
        let ages: Vec<f64> = slots
            .iter()
            .filter_map(|s| match s {
                Slot::Clinical { age_days, .. } => Some(std.apply(f64::from(*age_days))),
                Slot::Special(_) => None,
            })
            .collect();
        if ages.is_empty() {
            return Ok(None);
        }
        let mut buf = vec![0.0; d];
        let mut data = Vec::with_capacity(ages.len() * d);
        for a in ages.iter() {
            enc.encode_into(*a, &mut buf)?;
            data.extend(buf.iter().map(|&v| T::of(v)));
        }
        Ok(Some(Tensor::new(vec![ages.len(), d], data)?))
    }

    /// Builds `E` for packed slots on the tape.
    pub fn embed_on_tape<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        store: &ParamStore<T>,
        slots: &[Slot],
        enc: &PLEncoder,
        std: &AgeStandardizer,
    ) -> Result<Var, EmbedError> {
        let n = slots.len();
        if n == 0 {
            return Err(EmbedError::Contract("nothing to embed".into()));
        }
        if enc.width() != self.d {
            return Err(EmbedError::Contract(format!("PLE width {} differs from d = {}", enc.width(), self.d)));
        }
        let mut groups: [(Vec<usize>, Vec<usize>); 3] = Default::default();
        let mut clinical_rows = Vec::new();
        for (row, slot) in slots.iter().enumerate() {
            let (tag, id) = self.check_slot(store, slot)?;
            groups[tag as usize].0.push(row);
            groups[tag as usize].1.push(id);
            if tag.is_clinical() {
                clinical_rows.push(row);
            }
        }
        let mut parts = Vec::with_capacity(4);
        for (tag, (rows, ids)) in [TokenType::Special, TokenType::Diagnosis, TokenType::Medication].into_iter().zip(&groups) {
            if rows.is_empty() {
                continue;
            }
            let g = tape.embedding(bound.var(self.table(tag)), ids)?;
            parts.push(tape.scatter_rows(g, rows, n)?);
        }
        if let Some(p) = Self::ple_matrix::<T>(slots, enc, std)? {
            let p = tape.constant(p);
            let proj = tape.matmul(p, bound.var(self.w_age))?;
            let proj = tape.add_row(proj, bound.var(self.b_age))?;
            parts.push(tape.scatter_rows(proj, &clinical_rows, n)?);
        }
        let mut e = parts[0];
        for &p in &parts[1..] {
            e = tape.add(e, p)?;
        }
        Ok(e)
    }
}

/// `E` for one sequence, evaluated directly from the parameter values.
pub fn embed_sequence<T: Scalar>(
    seq: &TokenSequence,
    store: &ParamStore<T>,
    stack: &EmbeddingStack,
    enc: &PLEncoder,
    std: &AgeStandardizer,
) -> Result<Tensor<T>, EmbedError> {
    if !seq.is_well_formed() {
        return Err(EmbedError::Contract(format!("sequence {} is not [CLS], sex, clinical events", seq.patient_id)));
    }
    let slots = Slot::from_sequence(seq);
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let e = stack.embed_on_tape(&mut tape, &bound, store, &slots, enc, std)?;
    Ok(tape.value(e).clone())
}
