//! Structured medical event-sequence modelling at desk scale.
//!
//! The crate covers the full pipeline: synthetic claims generation and
//! ingestion, vocabulary and token-sequence construction, piecewise-linear age
//! embeddings, an encoder-only Transformer pretrained with a three-term masked
//! objective, limited-label fine-tuning, a gradient-boosted tree baseline, and
//! ranking metrics with compute accounting.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix the precision for common uses.

pub mod baseline;
pub mod claimsgen;
pub mod corpus;
pub mod embed;
pub mod encoder;
pub mod evalmetrics;
pub mod finetune;
pub mod numcore;
pub mod pipeline;
pub mod scalar;
pub mod stats;

pub use scalar::Scalar;

pub type Tensor32 = numcore::Tensor<f32>;
pub type Tensor64 = numcore::Tensor<f64>;
