use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{TokenSequence, TokenType, MASK};
use crate::embed::Slot;

/// Original content of a masked position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskTarget {
    pub seq: usize,
    pub pos: usize,
    pub tag: TokenType,
    pub id: u32,
    pub age_days: u32,
}

/// Model inputs with masked clinical positions replaced by `[MASK]`
/// (no code, no age), plus the hidden originals.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    pub inputs: Vec<Vec<Slot>>,
    pub targets: Vec<MaskTarget>,
}

impl MaskedBatch {
    pub fn n_masked(&self) -> usize {
        self.targets.len()
    }
}

/// Masks each clinical position independently with probability `rate`; the
/// `[CLS]` and sex positions are never touched.
pub fn mask_batch_with<'a, R: Rng>(seqs: impl IntoIterator<Item = &'a TokenSequence>, rate: f64, rng: &mut R) -> MaskedBatch {
    let rate = rate.clamp(0.0, 1.0);
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (si, seq) in seqs.into_iter().enumerate() {
        let mut slots = Slot::from_sequence(seq);
        for (pos, slot) in slots.iter_mut().enumerate().skip(2) {
            if let Slot::Clinical { tag, id, age_days } = *slot {
                if rng.random_bool(rate) {
                    targets.push(MaskTarget { seq: si, pos, tag, id, age_days });
                    *slot = Slot::Special(MASK);
                }
            }
        }
        inputs.push(slots);
    }
    MaskedBatch { inputs, targets }
}

pub fn mask_batch(seqs: &[TokenSequence], rate: f64, seed: u64) -> MaskedBatch {
    mask_batch_with(seqs, rate, &mut ChaCha8Rng::seed_from_u64(seed))
}
