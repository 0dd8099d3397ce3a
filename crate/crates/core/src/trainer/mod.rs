//! Training loop: normalized loss, query sampling, step-decay schedule and best-validation selection.

mod batch;
mod loss;
mod run;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use batch::{frame_input, predict_frame, Example, ExampleSet};
pub use loss::{lr_at_epoch, nmse, nmse_loss, sample_queries, scheduled_lr, QuerySample, NMSE_EPS};
pub use run::{
    load_history, load_run, train, train_step, write_run, EpochRecord, StepOutcome, TrainState, CHECKPOINT_DIR, CONFIG_FILE, HISTORY_FILE,
    STATS_FILE,
};

use crate::datakit::DataError;
use crate::diffmath::DiffError;
use crate::operators::OpError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr:e})")]
    NonFinite { epoch: usize, batch: usize, lr: f64 },
    #[error(transparent)]
    Op(#[from] OpError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("I/O error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Optimizer, schedule and sampling settings. `lr: None` uses the model kind's default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub decay: f64,
    pub decay_period: usize,
    /// Query points sampled per frame for query-style models.
    pub k: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: None, epochs: 100, batch_size: 32, decay: 0.9, decay_period: 20, k: 1000, seed: 0, precision: Precision::F32, patience: 30 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(TrainError::Config(format!("decay {} outside (0, 1]", self.decay)));
        }
        if self.k == 0 {
            return Err(TrainError::Config("k must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if self.decay_period == 0 {
            return Err(TrainError::Config("decay period must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        if let Some(lr) = self.lr {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(TrainError::Config(format!("learning rate {lr} must be positive")));
            }
        }
        Ok(())
    }

    pub fn lr_for(&self, kind: crate::operators::ModelKind) -> f64 {
        self.lr.unwrap_or_else(|| kind.default_lr())
    }
}
