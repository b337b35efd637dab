use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EarlyStopState, FinetuneError, LabeledExample};
use crate::corpus::truncate_recent;
use crate::embed::{init_normal, Slot};
use crate::encoder::EncoderModel;
use crate::evalmetrics::auroc;
use crate::numcore::{adam_step, sigmoid, AdamConfig, AdamState, BoundParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub threshold: f64,
    pub patience: usize,
    pub eval_batch: usize,
    /// Seeds the head initialisation and the batch order.
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { batch_size: 8, lr: 1e-5, max_epochs: 20, threshold: 0.001, patience: 2, eval_batch: 64, seed: 0 }
    }
}

impl FinetuneConfig {
    /// 20 epochs for the smallest label budget, 40 otherwise.
    pub fn epochs_for_labels(n_labels: usize) -> usize {
        if n_labels <= 100 {
            20
        } else {
            40
        }
    }
}

/// Encoder plus a single-logit head on the `[CLS]` state.
#[derive(Clone, Debug)]
pub struct Classifier<T> {
    pub encoder: EncoderModel<T>,
    pub head: ParamStore<T>,
}

const HEAD_W: ParamId = ParamId(0);
const HEAD_B: ParamId = ParamId(1);

impl<T: Scalar> Classifier<T> {
    pub fn new(encoder: EncoderModel<T>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = encoder.d();
        let mut head = ParamStore::new();
        head.add("cls_head.w", init_normal(&[d, 1], &mut rng));
        head.add("cls_head.b", Tensor::zeros(&[1]));
        Self { encoder, head }
    }

    /// Model input for one example: the most recent history that fits the context.
    pub fn slots(&self, e: &LabeledExample) -> Result<Vec<Slot>, FinetuneError> {
        let seq = truncate_recent(&e.input, self.encoder.config.max_seq_len).map_err(|err| FinetuneError::Contract(err.to_string()))?;
        Ok(Slot::from_sequence(&seq))
    }

    /// Head logits for a batch of inputs.
    fn logits_on_tape(
        &self,
        tape: &mut Tape<T>,
        inputs: &[Vec<Slot>],
        train: bool,
    ) -> Result<(Var, BoundParams, BoundParams), FinetuneError> {
        let (enc, head) = if train {
            (self.encoder.store.bind(tape), self.head.bind(tape))
        } else {
            (self.encoder.store.bind_frozen(tape), self.head.bind_frozen(tape))
        };
        let (h, starts) = self.encoder.hidden_on_tape(tape, &enc, inputs)?;
        let cls = tape.embedding(h, &starts)?;
        let z = tape.matmul(cls, head.var(HEAD_W))?;
        let z = tape.add_row(z, head.var(HEAD_B))?;
        Ok((z, enc, head))
    }

    /// Probability of the positive class for each example.
    pub fn predict(&self, examples: &[LabeledExample], eval_batch: usize) -> Result<Vec<f64>, FinetuneError> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(eval_batch.max(1)) {
            let inputs = chunk.iter().map(|e| self.slots(e)).collect::<Result<Vec<_>, _>>()?;
            let mut tape = Tape::new();
            let (z, ..) = self.logits_on_tape(&mut tape, &inputs, false)?;
            out.extend(tape.value(z).data().iter().map(|&v| sigmoid(v).as_f64()));
        }
        Ok(out)
    }
}

/// Sigmoid of the head output on each example's `[CLS]` state.
pub fn predict_prob<T: Scalar>(classifier: &Classifier<T>, examples: &[LabeledExample]) -> Result<Vec<f64>, FinetuneError> {
    classifier.predict(examples, 64)
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome<T> {
    /// Weights from the epoch with the best validation AUROC.
    pub classifier: Classifier<T>,
    pub val_auroc: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Full-parameter fine-tuning with binary cross-entropy. Encoder and head
/// keep separate Adam states; the MLM heads receive no gradient.
pub fn finetune<T: Scalar>(
    encoder: EncoderModel<T>,
    train: &[LabeledExample],
    val: &[LabeledExample],
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome<T>, FinetuneError> {
    if val.is_empty() {
        return Err(FinetuneError::Contract("validation set is empty".into()));
    }
    if train.is_empty() {
        return Err(FinetuneError::Contract("training set is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(FinetuneError::Config("batch_size and max_epochs must be positive".into()));
    }
    let val_labels: Vec<bool> = val.iter().map(|e| e.label).collect();
    let mut clf = Classifier::new(encoder, cfg.seed);
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut enc_state = AdamState::new(&clf.encoder.store);
    let mut head_state = AdamState::new(&clf.head);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xf1e7);
    let mut stop = EarlyStopState::new(cfg.threshold, cfg.patience);
    let mut best: Option<(usize, f64, Classifier<T>)> = None;
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let inputs = idx.iter().map(|&i| clf.slots(&train[i])).collect::<Result<Vec<_>, _>>()?;
            let labels: Vec<T> = idx.iter().map(|&i| if train[i].label { T::one() } else { T::zero() }).collect();
            let mut tape = Tape::new();
            let (z, enc, head) = clf.logits_on_tape(&mut tape, &inputs, true)?;
            let loss = tape.bce_with_logits(z, &labels)?;
            if !tape.value(loss).item().is_finite() {
                return Err(FinetuneError::Diverged { epoch });
            }
            let mut g = tape.backward(loss)?;
            let (ge, gh) = (enc.gradients(&mut g), head.gradients(&mut g));
            adam_step(&mut clf.encoder.store, &ge, &mut enc_state, &adam);
            adam_step(&mut clf.head, &gh, &mut head_state, &adam);
        }
        let p = clf.predict(val, cfg.eval_batch)?;
        let a = auroc(&p, &val_labels)?;
        trace.push(a);
        if best.as_ref().is_none_or(|b| a > b.1) {
            best = Some((epoch, a, clf.clone()));
        }
        if stop.update(a) {
            break;
        }
    }
    let (best_epoch, _, classifier) = best.expect("at least one epoch ran");
    Ok(FinetuneOutcome { classifier, epochs_run: trace.len(), val_auroc: trace, best_epoch })
}
