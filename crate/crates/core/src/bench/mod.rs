//! Evaluation harness: field metrics, identity baseline, rollouts, cost profiles and reports.

mod eval;
mod metrics;
mod profile;
mod report;

use std::path::PathBuf;

pub use eval::{evaluate, eval_identity, rollout, rollout_mean, IdentityPredictor, ModelPredictor, OraclePredictor, Predictor, RolloutCurve};
pub use metrics::{compute_metrics, Aggregation, ErrorSums, Metrics, MetricsReport};
pub use profile::{profile, CostProfile, ProfileConfig};
pub use report::{emit_report, read_results, RecordKey, ResultRecord, RESULTS_FILE};

use crate::datakit::DataError;
use crate::operators::OpError;
use crate::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("contract violated: {0}")]
    Contract(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Op(#[from] OpError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("plot error: {0}")]
    Plot(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("I/O error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}
