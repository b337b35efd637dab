//! Encoder-only Transformer with a three-term masked objective: diagnosis and
//! medication cross-entropy plus age regression.

mod checkpoint;
mod mask;
mod model;
mod train;

use thiserror::Error;

use crate::embed::EmbedError;
use crate::numcore::NumError;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use mask::{mask_batch, mask_batch_with, MaskTarget, MaskedBatch};
pub use model::{count_params, EncoderModel, LayerParams, MlmLoss, ModelConfig};
pub use train::{evaluate_mlm, pretrain, write_loss_curve, EpochRecord, PretrainConfig, PretrainOutcome};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("{0}")]
    Contract(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
