use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::datakit::{normalize_params, Dataset};
use crate::diffmath::AdamState;
use crate::operators::Model;
use crate::scalar::Scalar;
use crate::trainer::{frame_input, train_step, ExampleSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    /// Timed iterations; raised to 20 when lower.
    pub iterations: usize,
    pub warmup: usize,
    pub train_batch: usize,
    /// Query points per frame for query-style models.
    pub k: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self { iterations: 20, warmup: 3, train_batch: 32, k: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub params: usize,
    /// Median wall time of one optimizer step at the training batch size.
    pub train_step_secs: f64,
    /// Step time multiplied by the batches in one pass over the training split.
    pub train_epoch_secs: f64,
    /// Bytes held by parameters, Adam moments, the recorded tape and gradients.
    pub peak_train_bytes: usize,
    /// Median wall time of one full-frame prediction at batch size 1.
    pub inference_secs: f64,
    pub iterations: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn timed(iterations: usize, warmup: usize, mut f: impl FnMut() -> Result<(), BenchError>) -> Result<f64, BenchError> {
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64());
    }
    Ok(median(samples))
}

/// Times training steps on a private copy of `model` and inference on `model`
/// itself; the given model is never modified.
pub fn profile<T: Scalar>(model: &Model<T>, dataset: &Dataset, cfg: &ProfileConfig) -> Result<CostProfile, BenchError> {
    let iterations = cfg.iterations.max(20);
    let stats = dataset.stats()?;
    let mut cases = dataset.train();
    if cases.is_empty() {
        cases = dataset.cases.iter().collect();
    }
    let set = ExampleSet::new(cases, &stats, model.kind());
    if set.is_empty() {
        return Err(BenchError::Contract("no examples to profile".into()));
    }
    let idx: Vec<usize> = (0..cfg.train_batch.max(1)).map(|i| i % set.len()).collect();
    let (input, label, mask) = set.batch::<T>(&idx, cfg.k, 0, 0)?;
    let mut copy = model.clone();
    let mut adam = AdamState::new(copy.params(), 1e-12);
    let mut tape_bytes = 0;
    let train_step_secs = timed(iterations, cfg.warmup, || {
        let out = train_step(&mut copy, &mut adam, &input, label.clone(), mask.clone(), 1e-12)?;
        tape_bytes = tape_bytes.max(out.tape_bytes);
        Ok(())
    })?;
    let param_bytes = model.count_params() * T::BYTES;
    let batches = set.len().div_ceil(cfg.train_batch.max(1));

    let e = set.examples[0];
    let case = set.case(e.case);
    let omega = normalize_params(&case.omega(), &stats);
    let single = frame_input::<T>(model.kind(), case, case.velocity(e.t.saturating_sub(1)), e.t, &omega);
    let inference_secs = timed(iterations, cfg.warmup, || {
        model.predict(&single)?;
        Ok(())
    })?;
    Ok(CostProfile {
        params: model.count_params(),
        train_step_secs,
        train_epoch_secs: train_step_secs * batches as f64,
        // parameters, gradients and two Adam moments
        peak_train_bytes: 4 * param_bytes + tape_bytes,
        inference_secs,
        iterations,
    })
}
