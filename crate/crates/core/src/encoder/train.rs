use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mask::mask_batch_with;
use super::model::{EncoderModel, MlmLoss};
use super::EncoderError;
use crate::corpus::{truncate_sequence, TokenSequence};
use crate::evalmetrics::WallclockTracker;
use crate::numcore::{adam_step, AdamConfig, AdamState, Tape};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Seed of the fixed validation masks, so epochs are compared on equal footing.
    pub val_mask_seed: u64,
    /// Sequences per forward pass during evaluation.
    pub eval_batch: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 10, val_mask_seed: 7, eval_batch: 64 }
    }
}

/// One row of the loss curve; epoch 0 is the untrained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val: MlmLoss,
    pub cum_wallclock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainOutcome {
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Active train+validation seconds up to the best epoch.
    pub wallclock_to_best_s: f64,
    pub total_wallclock_s: f64,
}

fn clip<'a>(seqs: &'a [TokenSequence], max_len: usize) -> Result<Vec<std::borrow::Cow<'a, TokenSequence>>, EncoderError> {
    seqs.iter()
        .map(|s| {
            Ok(if s.len() > max_len {
                std::borrow::Cow::Owned(truncate_sequence(s, max_len).map_err(|e| EncoderError::Contract(e.to_string()))?)
            } else {
                std::borrow::Cow::Borrowed(s)
            })
        })
        .collect()
}

/// Mask-weighted loss over a whole set: each cross-entropy term averages over
/// all masked positions of its type, the age term over all masked positions.
pub fn evaluate_mlm<T: Scalar>(model: &EncoderModel<T>, seqs: &[TokenSequence], mask_seed: u64, eval_batch: usize) -> Result<MlmLoss, EncoderError> {
    let seqs = clip(seqs, model.config.max_seq_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let (mut diag, mut med, mut age) = ((0.0, 0usize), (0.0, 0usize), (0.0, 0usize));
    for chunk in seqs.chunks(eval_batch.max(1)) {
        let batch = mask_batch_with(chunk.iter().map(|c| c.as_ref()), model.config.mask_rate, &mut rng);
        if batch.targets.is_empty() {
            continue;
        }
        let mut tape = Tape::new();
        let bound = model.store.bind_frozen(&mut tape);
        let (_, parts, [nd, nm]) = model.mlm_on_tape(&mut tape, &bound, &batch)?;
        diag = (diag.0 + parts.ce_diag * nd as f64, diag.1 + nd);
        med = (med.0 + parts.ce_med * nm as f64, med.1 + nm);
        age = (age.0 + parts.mse_age * (nd + nm) as f64, age.1 + nd + nm);
    }
    if age.1 == 0 {
        return Err(EncoderError::Contract("evaluation set produced no masked positions".into()));
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s / n as f64 };
    let (ce_diag, ce_med, mse_age) = (mean(diag), mean(med), mean(age));
    Ok(MlmLoss { total: ce_diag + ce_med + mse_age, ce_diag, ce_med, mse_age })
}

/// Epoch loop with fresh masks per batch, validation after every epoch and
/// the minimum-validation weights restored at the end.
pub fn pretrain<T: Scalar>(
    model: &mut EncoderModel<T>,
    train: &[TokenSequence],
    val: &[TokenSequence],
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome, EncoderError> {
    if train.is_empty() || val.is_empty() {
        return Err(EncoderError::Contract("pretraining needs nonempty train and validation sets".into()));
    }
    let train = clip(train, model.config.max_seq_len)?;
    let adam = AdamConfig::with_lr(model.config.lr);
    let mut state = AdamState::new(&model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x5eed);
    let mut clock = WallclockTracker::new();

    let initial = clock.measure(|| evaluate_mlm(model, val, cfg.val_mask_seed, cfg.eval_batch))?;
    clock.mark_best();
    let mut curve = vec![EpochRecord { epoch: 0, train_loss: None, val: initial, cum_wallclock_s: clock.total_s() }];
    let mut best = (0, initial.total, model.store.flatten());

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        clock.start();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for (bi, idx) in order.chunks(model.config.batch_size).enumerate() {
            let batch = mask_batch_with(idx.iter().map(|&i| train[i].as_ref()), model.config.mask_rate, &mut rng);
            if batch.targets.is_empty() {
                continue;
            }
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape);
            let (loss, parts, _) = model.mlm_on_tape(&mut tape, &bound, &batch)?;
            if !parts.total.is_finite() {
                return Err(EncoderError::Diverged { epoch, batch: bi });
            }
            let mut grads = tape.backward(loss)?;
            let grads = bound.gradients(&mut grads);
            adam_step(&mut model.store, &grads, &mut state, &adam);
            loss_sum += parts.total;
            batches += 1;
        }
        let v = evaluate_mlm(model, val, cfg.val_mask_seed, cfg.eval_batch)?;
        if !v.total.is_finite() {
            return Err(EncoderError::Diverged { epoch, batch: usize::MAX });
        }
        if v.total < best.1 {
            best = (epoch, v.total, model.store.flatten());
            clock.mark_best();
        }
        clock.stop();
        curve.push(EpochRecord {
            epoch,
            train_loss: (batches > 0).then(|| loss_sum / batches as f64),
            val: v,
            cum_wallclock_s: clock.total_s(),
        });
    }
    model.store.load_flat(&best.2)?;
    Ok(PretrainOutcome {
        curve,
        best_epoch: best.0,
        best_val_loss: best.1,
        wallclock_to_best_s: clock.to_best_s(),
        total_wallclock_s: clock.total_s(),
    })
}

/// Loss curve as CSV: `epoch,train_loss,val_loss,ce_diag,ce_med,mse_age,cum_wallclock_s`.
pub fn write_loss_curve<W: Write>(curve: &[EpochRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,val_loss,ce_diag,ce_med,mse_age,cum_wallclock_s")?;
    for r in curve {
        let train = r.train_loss.map(|t| format!("{t:.6}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.3}",
            r.epoch, train, r.val.total, r.val.ce_diag, r.val.ce_med, r.val.mse_age, r.cum_wallclock_s
        )?;
    }
    Ok(())
}
