use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::diffmath::{DiffError, Tape, Var};
use crate::operators::cell_coord;
use crate::scalar::Scalar;

/// Floor for the label energy in the normalized error.
pub const NMSE_EPS: f64 = 1e-12;

/// `sum (y - yhat)^2 / sum y^2` over all elements. The flag is set when the
/// label energy fell below [`NMSE_EPS`] and was replaced by it.
pub fn nmse<T: Scalar>(pred: &[T], label: &[T]) -> Result<(f64, bool), TrainError> {
    if pred.len() != label.len() {
        return Err(TrainError::Contract(format!("prediction of {} values for {} labels", pred.len(), label.len())));
    }
    let (mut err, mut energy) = (0.0, 0.0);
    for (&p, &y) in pred.iter().zip(label) {
        let (p, y) = (p.as_f64(), y.as_f64());
        err += (y - p) * (y - p);
        energy += y * y;
    }
    let flagged = energy < NMSE_EPS;
    Ok((err / energy.max(NMSE_EPS), flagged))
}

/// Differentiable counterpart of [`nmse`]; `label` is treated as a constant.
pub fn nmse_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, label: Var) -> Result<(Var, bool), DiffError> {
    let energy: f64 = tape.value(label).data().iter().map(|y| y.as_f64() * y.as_f64()).sum();
    let diff = tape.sub(pred, label)?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    Ok((tape.scale(total, T::lit(1.0 / energy.max(NMSE_EPS))), energy < NMSE_EPS))
}

pub fn scheduled_lr(base: f64, decay: f64, period: usize, epoch: usize) -> f64 {
    base * decay.powi((epoch / period.max(1)) as i32)
}

/// `base * 0.9^floor(epoch / 20)`.
pub fn lr_at_epoch(base: f64, epoch: usize) -> f64 {
    scheduled_lr(base, 0.9, 20, epoch)
}

/// One sampled fluid cell with its normalized centre and `u, v` label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuerySample {
    pub cell: usize,
    pub x: f64,
    pub y: f64,
    pub value: [f32; 2],
}

/// `k` distinct fluid cells drawn uniformly from an `h x w` grid. `frame` holds
/// at least the `u, v` planes.
pub fn sample_queries(frame: &[f32], mask: &[u8], h: usize, w: usize, k: usize, seed: u64) -> Result<Vec<QuerySample>, TrainError> {
    let plane = h * w;
    if mask.len() != plane || frame.len() < 2 * plane {
        return Err(TrainError::Contract(format!("frame of {} values and mask of {} cells for a {h} x {w} grid", frame.len(), mask.len())));
    }
    let fluid: Vec<usize> = (0..plane).filter(|&c| mask[c] == 1).collect();
    if k > fluid.len() {
        return Err(TrainError::Contract(format!("cannot sample {k} queries without replacement from {} fluid cells", fluid.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, fluid.len(), k)
        .into_iter()
        .map(|i| {
            let cell = fluid[i];
            let (x, y) = cell_coord(cell, h, w);
            QuerySample { cell, x, y, value: [frame[cell], frame[plane + cell]] }
        })
        .collect())
}
