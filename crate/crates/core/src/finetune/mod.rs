//! Downstream tasks: cohort extraction, balanced sampling, `[CLS]`-head
//! fine-tuning with early stopping, and the pretrained-vs-scratch comparison.

mod classifier;
mod cohort;
mod compare;
mod early_stop;

use thiserror::Error;

use crate::encoder::EncoderError;
use crate::evalmetrics::MetricError;
use crate::numcore::NumError;

pub use classifier::{finetune, predict_prob, Classifier, FinetuneConfig, FinetuneOutcome};
pub use cohort::{extract_cohort, label_of, sample_balanced, Cohort, LabeledExample, TaskKind, TaskSpec, HORIZON_DAYS};
pub use compare::{compare_pretrained_vs_scratch, evaluate, Arm, ComparisonPlan, ComparisonRow, TaskPools, DATASET_SEEDS, INIT_SEEDS};
pub use early_stop::{early_stop_epoch, EarlyStopState};

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("not enough {class} examples: need {needed}, have {available}")]
    Shortfall { class: &'static str, needed: usize, available: usize },
    #[error("fine-tuning diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("{0}")]
    Contract(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}
