//! Experiment harness: generate → pretrain sweep → fine-tune / baseline → report.

pub mod commands;
pub mod config;
pub mod report;
pub mod svg;

use std::path::PathBuf;

use medscale::baseline::BaselineError;
use medscale::claimsgen::ClaimsError;
use medscale::corpus::CorpusError;
use medscale::embed::EmbedError;
use medscale::encoder::EncoderError;
use medscale::evalmetrics::MetricError;
use medscale::finetune::FinetuneError;
use thiserror::Error;

pub use commands::{cmd_baseline, cmd_finetune, cmd_generate, cmd_pretrain, cmd_report, cmd_sweep, Options};
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing {}: run `medscale {producer}` first", path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Failed(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Failed(_) | CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::Diverged { .. } => CliError::Numeric(e.to_string()),
            EncoderError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<FinetuneError> for CliError {
    fn from(e: FinetuneError) -> Self {
        match e {
            FinetuneError::Diverged { .. } | FinetuneError::Metric(MetricError::NonFinite(_)) => CliError::Numeric(e.to_string()),
            FinetuneError::Encoder(inner) => inner.into(),
            FinetuneError::Shortfall { .. } | FinetuneError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<ClaimsError> for CliError {
    fn from(e: ClaimsError) -> Self {
        match e {
            ClaimsError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        CliError::Failed(e.to_string())
    }
}
