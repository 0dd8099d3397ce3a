use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::trainer::NMSE_EPS;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub nmse: f64,
    pub mae: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 3] = ["mse", "nmse", "mae"];

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "mse" => Some(self.mse),
            "nmse" => Some(self.nmse),
            "mae" => Some(self.mae),
            _ => None,
        }
    }
}

/// Sums over the fluid cells of one or more frames.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorSums {
    pub squared: f64,
    pub energy: f64,
    pub absolute: f64,
    pub count: usize,
}

impl ErrorSums {
    /// Accumulates `[C, H, W]` arrays against a `[H, W]` mask.
    pub fn of(y: &[f32], yhat: &[f32], mask: &[u8]) -> Result<Self, BenchError> {
        let plane = mask.len();
        if y.len() != yhat.len() || plane == 0 || y.len() % plane != 0 {
            return Err(BenchError::Contract(format!("label of {} values, prediction of {}, mask of {plane} cells", y.len(), yhat.len())));
        }
        let mut s = Self::default();
        for (k, (&a, &b)) in y.iter().zip(yhat).enumerate() {
            if mask[k % plane] == 1 {
                let (a, b) = (a as f64, b as f64);
                s.squared += (a - b) * (a - b);
                s.energy += a * a;
                s.absolute += (a - b).abs();
                s.count += 1;
            }
        }
        Ok(s)
    }

    pub fn add(&mut self, other: &Self) {
        self.squared += other.squared;
        self.energy += other.energy;
        self.absolute += other.absolute;
        self.count += other.count;
    }

    /// Metrics and whether the label energy hit the NMSE floor.
    pub fn metrics(&self) -> (Metrics, bool) {
        let n = self.count.max(1) as f64;
        let m = Metrics { mse: self.squared / n, nmse: self.squared / self.energy.max(NMSE_EPS), mae: self.absolute / n };
        (m, self.energy < NMSE_EPS)
    }
}

/// MSE, NMSE and MAE of `yhat` against `y` (`[C, H, W]`) over the fluid cells of `mask`.
/// The flag is set when the label energy was floored.
pub fn compute_metrics(y: &[f32], yhat: &[f32], mask: &[u8]) -> Result<(Metrics, bool), BenchError> {
    ErrorSums::of(y, yhat, mask).map(|s| s.metrics())
}

/// How frame metrics combine over a split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-frame metrics.
    #[default]
    PerFrame,
    /// One set of metrics over all cells of all frames.
    Pooled,
}

/// Aggregated metrics over a set of frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: Metrics,
    pub frames: usize,
    /// Frames whose label energy was floored.
    pub flagged: usize,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Accumulator {
    mean: Metrics,
    sums: ErrorSums,
    frames: usize,
    flagged: usize,
}

impl Accumulator {
    pub fn push(&mut self, frame: ErrorSums) {
        let (m, flagged) = frame.metrics();
        self.mean.mse += m.mse;
        self.mean.nmse += m.nmse;
        self.mean.mae += m.mae;
        self.sums.add(&frame);
        self.frames += 1;
        self.flagged += usize::from(flagged);
    }

    pub fn finish(&self, agg: Aggregation) -> MetricsReport {
        let metrics = match agg {
            Aggregation::PerFrame => {
                let n = self.frames.max(1) as f64;
                Metrics { mse: self.mean.mse / n, nmse: self.mean.nmse / n, mae: self.mean.mae / n }
            }
            Aggregation::Pooled => self.sums.metrics().0,
        };
        MetricsReport { metrics, frames: self.frames, flagged: self.flagged }
    }
}
