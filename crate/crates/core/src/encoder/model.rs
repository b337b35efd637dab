use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mask::MaskedBatch;
use super::EncoderError;
use crate::corpus::{TokenType, Vocabulary};
use crate::embed::{init_normal, AgeStandardizer, EmbeddingStack, PLEncoder, Slot};
use crate::numcore::{AttentionLayout, BoundParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::Scalar;

/// Architecture and optimisation settings of one model size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub max_seq_len: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mask_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d: 64, layers: 4, heads: 16, ffn_mult: 4, max_seq_len: 512, batch_size: 32, lr: 1e-3, mask_rate: 0.15, seed: 0 }
    }
}

impl ModelConfig {
    /// Published-scale configuration for width `d`: 4 layers, 16 heads,
    /// 8,000-token context. The feed-forward width is `3d`, the multiplier
    /// that puts parameter and FLOPs counts in line with the published table.
    pub fn paper_scale(d: usize) -> Self {
        Self { d, layers: 4, heads: 16, ffn_mult: 3, max_seq_len: 8000, batch_size: 512, ..Self::default() }
    }

    pub fn ffn(&self) -> usize {
        self.d * self.ffn_mult
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::Config(m));
        if self.d == 0 || self.layers == 0 || self.heads == 0 || self.ffn_mult == 0 || self.batch_size == 0 {
            return bad("d, layers, heads, ffn_mult and batch_size must be positive".into());
        }
        if self.d % self.heads != 0 {
            return bad(format!("d = {} is not divisible by {} heads", self.d, self.heads));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return bad(format!("mask_rate {} outside [0, 1]", self.mask_rate));
        }
        if self.max_seq_len < 3 {
            return bad("max_seq_len must be at least 3".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        Ok(())
    }
}

/// Exact scalar count of an [`EncoderModel`] with the given code vocabularies.
pub fn count_params(cfg: &ModelConfig, n_diag: usize, n_med: usize) -> usize {
    let (d, f) = (cfg.d, cfg.ffn());
    let tables = (crate::corpus::SPECIAL_TOKENS.len() + n_diag.max(1) + n_med.max(1)) * d;
    let age = d * d + d;
    let layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * 2 * d;
    let heads = (d * n_diag.max(1) + n_diag.max(1)) + (d * n_med.max(1) + n_med.max(1)) + (d + 1);
    tables + age + cfg.layers * layer + 2 * d + heads
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1: (ParamId, ParamId),
    pub wq: (ParamId, ParamId),
    pub wk: (ParamId, ParamId),
    pub wv: (ParamId, ParamId),
    pub wo: (ParamId, ParamId),
    pub ln2: (ParamId, ParamId),
    pub ff1: (ParamId, ParamId),
    pub ff2: (ParamId, ParamId),
}

/// Per-term masked-modelling loss; `total` is the plain sum of the three terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MlmLoss {
    pub total: f64,
    pub ce_diag: f64,
    pub ce_med: f64,
    pub mse_age: f64,
}

/// Encoder plus its embedding stack, output heads and fitted age transforms.
#[derive(Clone, Debug)]
pub struct EncoderModel<T> {
    pub config: ModelConfig,
    pub vocab_sizes: [usize; 3],
    pub store: ParamStore<T>,
    pub embed: EmbeddingStack,
    pub layers: Vec<LayerParams>,
    pub final_ln: (ParamId, ParamId),
    pub head_diag: (ParamId, ParamId),
    pub head_med: (ParamId, ParamId),
    pub head_age: (ParamId, ParamId),
    pub ple: PLEncoder,
    pub standardizer: AgeStandardizer,
}

fn linear<T: Scalar>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> (ParamId, ParamId) {
    (
        store.add(format!("{name}.w"), init_normal(&[fan_in, fan_out], rng)),
        store.add(format!("{name}.b"), Tensor::zeros(&[fan_out])),
    )
}

fn norm<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> (ParamId, ParamId) {
    (store.add(format!("{name}.gain"), Tensor::full(&[d], T::one())), store.add(format!("{name}.bias"), Tensor::zeros(&[d])))
}

impl<T: Scalar> EncoderModel<T> {
    /// Fresh model with N(0, 0.02) weights drawn from `config.seed`.
    pub fn new(config: ModelConfig, vocab: &Vocabulary, ple: PLEncoder, standardizer: AgeStandardizer) -> Result<Self, EncoderError> {
        Self::with_sizes(config, [vocab.n_special(), vocab.n_diag(), vocab.n_med()], ple, standardizer)
    }

    pub fn with_sizes(config: ModelConfig, vocab_sizes: [usize; 3], ple: PLEncoder, standardizer: AgeStandardizer) -> Result<Self, EncoderError> {
        config.validate()?;
        if ple.width() != config.d {
            return Err(EncoderError::Config(format!("PLE width {} differs from d = {}", ple.width(), config.d)));
        }
        let d = config.d;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let embed = EmbeddingStack::init_sized(&mut store, vocab_sizes, d, &mut rng);
        let layers = (0..config.layers)
            .map(|l| {
                let p = |s: &str| format!("layer{l}.{s}");
                LayerParams {
                    ln1: norm(&mut store, &p("ln1"), d),
                    wq: linear(&mut store, &p("q"), d, d, &mut rng),
                    wk: linear(&mut store, &p("k"), d, d, &mut rng),
                    wv: linear(&mut store, &p("v"), d, d, &mut rng),
                    wo: linear(&mut store, &p("o"), d, d, &mut rng),
                    ln2: norm(&mut store, &p("ln2"), d),
                    ff1: linear(&mut store, &p("ff1"), d, config.ffn(), &mut rng),
                    ff2: linear(&mut store, &p("ff2"), config.ffn(), d, &mut rng),
                }
            })
            .collect();
        let final_ln = norm(&mut store, "final_ln", d);
        let head_diag = linear(&mut store, "head.diag", d, vocab_sizes[1].max(1), &mut rng);
        let head_med = linear(&mut store, "head.med", d, vocab_sizes[2].max(1), &mut rng);
        let head_age = linear(&mut store, "head.age", d, 1, &mut rng);
        Ok(Self { config, vocab_sizes, store, embed, layers, final_ln, head_diag, head_med, head_age, ple, standardizer })
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn num_params(&self) -> usize {
        self.store.numel()
    }

    /// Runs the encoder blocks on embeddings `e` under `layout`.
    pub fn encode_on_tape(&self, tape: &mut Tape<T>, bound: &BoundParams, e: Var, layout: Arc<AttentionLayout>) -> Result<Var, EncoderError> {
        let v = |id: ParamId| bound.var(id);
        let affine = |tape: &mut Tape<T>, x: Var, (w, b): (ParamId, ParamId)| -> Result<Var, EncoderError> {
            let y = tape.matmul(x, v(w))?;
            Ok(tape.add_row(y, v(b))?)
        };
        let mut x = e;
        for lp in &self.layers {
            let h = tape.layer_norm(x, v(lp.ln1.0), v(lp.ln1.1))?;
            let q = affine(tape, h, lp.wq)?;
            let k = affine(tape, h, lp.wk)?;
            let val = affine(tape, h, lp.wv)?;
            let a = tape.attention(q, k, val, layout.clone())?;
            let o = affine(tape, a, lp.wo)?;
            x = tape.add(x, o)?;
            let h = tape.layer_norm(x, v(lp.ln2.0), v(lp.ln2.1))?;
            let f = affine(tape, h, lp.ff1)?;
            let f = tape.gelu(f);
            let f = affine(tape, f, lp.ff2)?;
            x = tape.add(x, f)?;
        }
        Ok(tape.layer_norm(x, v(self.final_ln.0), v(self.final_ln.1))?)
    }

    /// Embeds and encodes a packed batch; returns `H` and each sequence's first row.
    pub fn hidden_on_tape(&self, tape: &mut Tape<T>, bound: &BoundParams, inputs: &[Vec<Slot>]) -> Result<(Var, Vec<usize>), EncoderError> {
        if inputs.is_empty() {
            return Err(EncoderError::Contract("empty batch".into()));
        }
        let mut segments = Vec::with_capacity(inputs.len());
        let mut starts = Vec::with_capacity(inputs.len());
        let mut packed = Vec::with_capacity(inputs.iter().map(Vec::len).sum());
        for seq in inputs {
            if seq.is_empty() || seq.len() > self.config.max_seq_len {
                return Err(EncoderError::Contract(format!(
                    "sequence length {} outside 1..={}",
                    seq.len(),
                    self.config.max_seq_len
                )));
            }
            starts.push(packed.len());
            segments.push((packed.len(), seq.len()));
            packed.extend_from_slice(seq);
        }
        let e = self.embed.embed_on_tape(tape, bound, &self.store, &packed, &self.ple, &self.standardizer)?;
        let layout = Arc::new(AttentionLayout { heads: self.config.heads, segments, key_valid: None });
        Ok((self.encode_on_tape(tape, bound, e, layout)?, starts))
    }

    /// `H` for a single padded sequence of embeddings; `pad[i]` marks padding.
    pub fn forward(&self, e: &Tensor<T>, pad: &[bool]) -> Result<Tensor<T>, EncoderError> {
        let (n, d) = e.dims2()?;
        if d != self.d() || pad.len() != n {
            return Err(EncoderError::Contract(format!("embeddings [{n}×{d}] with {} pad flags for d = {}", pad.len(), self.d())));
        }
        if n > self.config.max_seq_len {
            return Err(EncoderError::Contract(format!("length {n} exceeds max_seq_len {}", self.config.max_seq_len)));
        }
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let ev = tape.constant(e.clone());
        let layout = Arc::new(AttentionLayout { heads: self.config.heads, segments: vec![(0, n)], key_valid: Some(pad.iter().map(|p| !p).collect()) });
        let h = self.encode_on_tape(&mut tape, &bound, ev, layout)?;
        Ok(tape.value(h).clone())
    }

    /// Masked-modelling loss on the tape. Absent terms contribute zero.
    pub fn mlm_on_tape(&self, tape: &mut Tape<T>, bound: &BoundParams, batch: &MaskedBatch) -> Result<(Var, MlmLoss, [usize; 2]), EncoderError> {
        if batch.targets.is_empty() {
            return Err(EncoderError::Contract("batch has no masked positions".into()));
        }
        let (h, starts) = self.hidden_on_tape(tape, bound, &batch.inputs)?;
        let v = |id: ParamId| bound.var(id);
        let mut rows = [Vec::new(), Vec::new()];
        let mut ids = [Vec::new(), Vec::new()];
        let mut all_rows = Vec::with_capacity(batch.targets.len());
        let mut ages = Vec::with_capacity(batch.targets.len());
        for t in &batch.targets {
            let row = starts[t.seq] + t.pos;
            let k = match t.tag {
                TokenType::Diagnosis => 0,
                TokenType::Medication => 1,
                TokenType::Special => return Err(EncoderError::Contract("special token cannot be a target".into())),
            };
            rows[k].push(row);
            ids[k].push(t.id as usize);
            all_rows.push(row);
            ages.push(T::of(self.standardizer.apply(f64::from(t.age_days))));
        }
        let mut parts = MlmLoss::default();
        let mut terms = Vec::with_capacity(3);
        for (k, head) in [self.head_diag, self.head_med].into_iter().enumerate() {
            if rows[k].is_empty() {
                continue;
            }
            let hs = tape.embedding(h, &rows[k])?;
            let logits = tape.matmul(hs, v(head.0))?;
            let logits = tape.add_row(logits, v(head.1))?;
            let ce = tape.cross_entropy(logits, &ids[k])?;
            let val = tape.value(ce).item().as_f64();
            if k == 0 {
                parts.ce_diag = val;
            } else {
                parts.ce_med = val;
            }
            terms.push(ce);
        }
        let hs = tape.embedding(h, &all_rows)?;
        let pred = tape.matmul(hs, v(self.head_age.0))?;
        let pred = tape.add_row(pred, v(self.head_age.1))?;
        let mse = tape.mse(pred, &ages)?;
        parts.mse_age = tape.value(mse).item().as_f64();
        terms.push(mse);
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        parts.total = tape.value(total).item().as_f64();
        Ok((total, parts, [rows[0].len(), rows[1].len()]))
    }

    /// Loss of one masked batch without recording gradients.
    pub fn mlm_loss(&self, batch: &MaskedBatch) -> Result<MlmLoss, EncoderError> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        Ok(self.mlm_on_tape(&mut tape, &bound, batch)?.1)
    }

    /// Final hidden state of the `[CLS]` position for each input.
    pub fn cls_states(&self, inputs: &[Vec<Slot>]) -> Result<Tensor<T>, EncoderError> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let (h, starts) = self.hidden_on_tape(&mut tape, &bound, inputs)?;
        let cls = tape.embedding(h, &starts)?;
        Ok(tape.value(cls).clone())
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Scalar>(&self) -> EncoderModel<U> {
        EncoderModel {
            config: self.config.clone(),
            vocab_sizes: self.vocab_sizes,
            store: self.store.cast(),
            embed: self.embed,
            layers: self.layers.clone(),
            final_ln: self.final_ln,
            head_diag: self.head_diag,
            head_med: self.head_med,
            head_age: self.head_age,
            ple: self.ple.clone(),
            standardizer: self.standardizer,
        }
    }
}
