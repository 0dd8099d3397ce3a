use rayon::prelude::*;

use super::metrics::{Accumulator, Aggregation, ErrorSums, Metrics, MetricsReport};
use super::BenchError;
use crate::datakit::{normalize_params, CaseRecord, Dataset, NormalizationStats};
use crate::operators::Model;
use crate::scalar::Scalar;
use crate::trainer::predict_frame;

/// Produces the velocity `[2, H, W]` of frame `t` of a case from the velocity
/// `prev` of frame `t - 1`.
pub trait Predictor: Sync {
    fn step(&self, case: &CaseRecord, prev: &[f32], t: usize) -> Result<Vec<f32>, BenchError>;
}

/// Predicts that nothing changes.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPredictor;

impl Predictor for IdentityPredictor {
    fn step(&self, _: &CaseRecord, prev: &[f32], _: usize) -> Result<Vec<f32>, BenchError> {
        Ok(prev.to_vec())
    }
}

/// Returns the recorded label.
#[derive(Clone, Copy, Debug, Default)]
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn step(&self, case: &CaseRecord, _: &[f32], t: usize) -> Result<Vec<f32>, BenchError> {
        Ok(case.velocity(t).to_vec())
    }
}

/// A trained model with the normalization statistics of its training set.
/// Non-autoregressive kinds ignore `prev` and are queried at frame `t`'s time.
#[derive(Clone, Copy, Debug)]
pub struct ModelPredictor<'a, T: Scalar> {
    pub model: &'a Model<T>,
    pub stats: &'a NormalizationStats,
}

impl<T: Scalar> Predictor for ModelPredictor<'_, T> {
    fn step(&self, case: &CaseRecord, prev: &[f32], t: usize) -> Result<Vec<f32>, BenchError> {
        let omega = normalize_params(&case.omega(), self.stats);
        Ok(predict_frame(self.model, case, prev, t, &omega)?)
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, BenchError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BenchError::Contract(format!("worker pool: {e}")))
}

fn case_frames(p: &dyn Predictor, case: &CaseRecord) -> Result<Vec<ErrorSums>, BenchError> {
    (1..case.n_frames())
        .map(|t| {
            let pred = p.step(case, case.velocity(t - 1), t)?;
            ErrorSums::of(case.velocity(t), &pred, case.mask())
        })
        .collect()
}

/// Single-step metrics over every consecutive frame pair of `cases`, evaluated
/// case-parallel on `workers` threads and aggregated in case order.
pub fn evaluate(p: &dyn Predictor, cases: &[&CaseRecord], agg: Aggregation, workers: usize) -> Result<MetricsReport, BenchError> {
    let per_case: Vec<Result<Vec<ErrorSums>, BenchError>> =
        pool(workers)?.install(|| cases.par_iter().map(|c| case_frames(p, c)).collect());
    let mut acc = Accumulator::default();
    for frames in per_case {
        for f in frames? {
            acc.push(f);
        }
    }
    Ok(acc.finish(agg))
}

/// Metrics of predicting `u(t) = u(t - 1)` over the named split.
pub fn eval_identity(dataset: &Dataset, split: &str) -> Result<MetricsReport, BenchError> {
    let cases = dataset.split_cases(split)?;
    evaluate(&IdentityPredictor, &cases, Aggregation::PerFrame, 1)
}

/// Per-step metrics of a rollout from the initial frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutCurve {
    /// Step indices `1..=N`.
    pub steps: Vec<usize>,
    pub metrics: Vec<Metrics>,
}

impl RolloutCurve {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Feeds each prediction back as the next input for `steps` steps starting from
/// frame 0, scoring step `k` against frame `k`. Truncated to the labeled frames.
pub fn rollout(p: &dyn Predictor, case: &CaseRecord, steps: usize) -> Result<RolloutCurve, BenchError> {
    let available = case.n_frames() - 1;
    if steps > available {
        log::warn!("case {} has {available} labeled steps; rollout truncated from {steps}", case.meta.case_id);
    }
    let n = steps.min(available);
    let mut prev = case.velocity(0).to_vec();
    let mut curve = RolloutCurve::default();
    for k in 1..=n {
        let pred = p.step(case, &prev, k)?;
        curve.steps.push(k);
        curve.metrics.push(ErrorSums::of(case.velocity(k), &pred, case.mask())?.metrics().0);
        prev = pred;
    }
    Ok(curve)
}

/// Step-wise mean of per-case rollouts, truncated to the shortest curve.
pub fn rollout_mean(p: &dyn Predictor, cases: &[&CaseRecord], steps: usize, workers: usize) -> Result<RolloutCurve, BenchError> {
    let curves: Vec<Result<RolloutCurve, BenchError>> =
        pool(workers)?.install(|| cases.par_iter().map(|c| rollout(p, c, steps)).collect());
    let curves = curves.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n = curves.iter().map(RolloutCurve::len).min().unwrap_or(0);
    let mut mean = RolloutCurve { steps: (1..=n).collect(), metrics: vec![Metrics::default(); n] };
    let c = curves.len() as f64;
    for curve in &curves {
        for (m, s) in mean.metrics.iter_mut().zip(&curve.metrics) {
            m.mse += s.mse / c;
            m.nmse += s.nmse / c;
            m.mae += s.mae / c;
        }
    }
    Ok(mean)
}
