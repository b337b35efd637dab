//! Count features and a native gradient-boosted tree baseline with
//! cross-validated grid search.

mod cv;
mod features;
mod gbdt;

use thiserror::Error;

use crate::evalmetrics::MetricError;

pub use cv::{cv_grid_search, stratified_folds, CvResult, GridPoint, GridSpec};
pub use features::{featurize, featurize_all, read_feature_matrix, write_feature_matrix, FeatureMatrix};
pub use gbdt::{predict_gbdt, train_gbdt, GbdtModel, GbdtParams, Node, Tree};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("{0}")]
    Contract(String),
    #[error("invalid parameters: {0}")]
    Config(String),
    #[error("feature cache: {0}")]
    Format(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
