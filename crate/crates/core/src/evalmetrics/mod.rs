//! Ranking metrics, compute accounting and wall-clock bookkeeping.

mod flops;
mod ranking;
mod wallclock;

pub use crate::encoder::count_params;
pub use flops::{estimate_flops, FlopsReport, FlopsTerms};
pub use ranking::{auprc, auroc, MetricError};
pub use wallclock::WallclockTracker;
