use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{example_seed, ExampleSet};
use super::loss::{nmse, nmse_loss, scheduled_lr};
use super::{TrainConfig, TrainError};
use crate::datakit::{Dataset, NormalizationStats};
use crate::diffmath::{adam_step, AdamState, Tape, Tensor};
use crate::operators::{load_checkpoint, save_checkpoint, InputStyle, Model, ModelInput};
use crate::scalar::Scalar;

pub const CONFIG_FILE: &str = "config.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const STATS_FILE: &str = "normalization.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Query sampling pass reserved for validation so every epoch sees the same points.
const VAL_PASS: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nmse: f64,
    /// Absent when the dataset has no validation cases.
    pub val_nmse: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    pub best_score: f64,
    pub stats: NormalizationStats,
    /// Batches whose label energy hit the NMSE floor.
    pub flagged_batches: usize,
    pub stopped_early: bool,
}

fn check_shapes<T: Scalar>(model: &Model<T>, dataset: &Dataset, stats: &NormalizationStats) -> Result<(), TrainError> {
    let spec = model.spec();
    if spec.omega_dim != stats.dim() {
        return Err(TrainError::Contract(format!("model expects {} parameters, dataset has {}", spec.omega_dim, stats.dim())));
    }
    if spec.kind().style() != InputStyle::Query {
        if let Some(c) = dataset.cases.iter().find(|c| [c.height(), c.width()] != spec.resolution) {
            return Err(TrainError::Contract(format!(
                "model grid {:?} differs from case {} grid [{}, {}]",
                spec.resolution,
                c.meta.case_id,
                c.height(),
                c.width()
            )));
        }
    }
    Ok(())
}

/// Mean per-example NMSE of `model` over `set`.
fn evaluate<T: Scalar>(model: &Model<T>, set: &ExampleSet, cfg: &TrainConfig) -> Result<f64, TrainError> {
    let order: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0;
    for idx in order.chunks(cfg.batch_size) {
        let (input, label, mask) = set.batch::<T>(idx, cfg.k, cfg.seed, VAL_PASS)?;
        let mut pred = model.predict(&input)?;
        if let Some(m) = &mask {
            pred.data_mut().iter_mut().zip(m.data()).for_each(|(p, &m)| *p *= m);
        }
        let per = pred.numel() / idx.len();
        for (p, y) in pred.data().chunks_exact(per).zip(label.data().chunks_exact(per)) {
            total += nmse(p, y)?.0;
        }
    }
    Ok(total / set.len() as f64)
}

/// Loss of one optimizer step and the tape's tensor footprint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub flagged: bool,
    pub tape_bytes: usize,
}

/// Forward, NMSE loss (prediction masked to fluid cells when `mask` is given),
/// backward and one Adam update. Parameters are left untouched when the loss is not finite.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    adam: &mut AdamState<T>,
    input: &ModelInput<T>,
    label: Tensor<T>,
    mask: Option<Tensor<T>>,
    lr: f64,
) -> Result<StepOutcome, TrainError> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true);
    let mut pred = model.forward(&mut tape, &vars, input)?;
    if let Some(m) = mask {
        let m = tape.constant(m);
        pred = tape.mul(pred, m)?;
    }
    let y = tape.constant(label);
    let (loss, flagged) = nmse_loss(&mut tape, pred, y)?;
    let value = tape.value(loss).data()[0].as_f64();
    let tape_bytes = tape.value_bytes();
    if value.is_finite() {
        let mut g = tape.backward(loss)?;
        let grads: Vec<_> = vars.iter().map(|&v| g.take(v)).collect();
        adam_step(model.params_mut(), &grads, adam, lr)?;
    }
    Ok(StepOutcome { loss: value, flagged, tape_bytes })
}

/// Trains with Adam under the step-decay schedule and returns the parameters of
/// the epoch with the lowest validation NMSE (training NMSE without validation cases).
pub fn train<T: Scalar>(mut model: Model<T>, dataset: &Dataset, cfg: &TrainConfig) -> Result<(Model<T>, TrainState), TrainError> {
    cfg.validate()?;
    let stats = dataset.stats()?;
    check_shapes(&model, dataset, &stats)?;
    let kind = model.kind();
    let train_set = ExampleSet::new(dataset.train(), &stats, kind);
    let val_set = ExampleSet::new(dataset.val(), &stats, kind);
    let mut state = TrainState {
        epoch: 0,
        history: Vec::new(),
        best_epoch: None,
        best_score: f64::INFINITY,
        stats,
        flagged_batches: 0,
        stopped_early: false,
    };
    if cfg.epochs == 0 {
        return Ok((model, state));
    }
    if train_set.is_empty() {
        return Err(TrainError::Contract("no training examples".into()));
    }
    if val_set.is_empty() {
        log::warn!("no validation cases; selecting on training NMSE");
    }
    let base = cfg.lr_for(kind);
    let mut adam = AdamState::new(model.params(), base);
    let mut best: Vec<Tensor<T>> = model.params().to_vec();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = scheduled_lr(base, cfg.decay, cfg.decay_period, epoch);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(example_seed(cfg.seed, epoch as u64, usize::MAX)));
        let mut sum = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (input, label, mask) = train_set.batch::<T>(idx, cfg.k, cfg.seed, epoch as u64)?;
            let step = train_step(&mut model, &mut adam, &input, label, mask, lr)?;
            if !step.loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: b, lr });
            }
            state.flagged_batches += usize::from(step.flagged);
            sum += step.loss;
            batches += 1;
        }
        let train_nmse = sum / batches as f64;
        let val_nmse = if val_set.is_empty() { None } else { Some(evaluate(&model, &val_set, cfg)?) };
        if let Some(v) = val_nmse.filter(|v| !v.is_finite()) {
            log::error!("validation NMSE {v} at epoch {epoch}");
            return Err(TrainError::NonFinite { epoch, batch: batches, lr });
        }
        log::info!("epoch {epoch}: train {train_nmse:.6e} val {} lr {lr:.3e}", val_nmse.map_or("-".into(), |v| format!("{v:.6e}")));
        state.history.push(EpochRecord { epoch, train_nmse, val_nmse, lr });
        state.epoch = epoch + 1;
        let score = val_nmse.unwrap_or(train_nmse);
        if score < state.best_score {
            state.best_score = score;
            state.best_epoch = Some(epoch);
            best.clone_from_slice(model.params());
        } else if state.best_epoch.is_some_and(|b| epoch - b >= cfg.patience) {
            log::info!("no improvement for {} epochs; stopping", cfg.patience);
            state.stopped_early = true;
            break;
        }
    }
    model.params_mut().clone_from_slice(&best);
    Ok((model, state))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

/// Writes `config.json` (with the resolved learning rate), `history.csv`,
/// the normalization statistics and the checkpoint directory.
pub fn write_run<T: Scalar>(dir: &Path, cfg: &TrainConfig, model: &Model<T>, state: &TrainState) -> Result<(), TrainError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut resolved = cfg.clone();
    resolved.lr = Some(cfg.lr_for(model.kind()));
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&resolved).map_err(|e| TrainError::Parse(e.to_string()))?).map_err(io(&path))?;
    let path = dir.join(STATS_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&state.stats).map_err(|e| TrainError::Parse(e.to_string()))?).map_err(io(&path))?;
    let path = dir.join(HISTORY_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| TrainError::Parse(format!("{}: {e}", path.display())))?;
    for r in &state.history {
        w.serialize(r).map_err(|e| TrainError::Parse(e.to_string()))?;
    }
    if state.history.is_empty() {
        w.write_record(["epoch", "train_nmse", "val_nmse", "lr"]).map_err(|e| TrainError::Parse(e.to_string()))?;
    }
    w.flush().map_err(io(&path))?;
    save_checkpoint(model, &dir.join(CHECKPOINT_DIR))?;
    Ok(())
}

pub fn load_history(path: &Path) -> Result<Vec<EpochRecord>, TrainError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| TrainError::Parse(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| TrainError::Parse(format!("{}: {e}", path.display())))).collect()
}

/// Checkpointed model and normalization statistics of a run directory.
pub fn load_run<T: Scalar>(dir: &Path) -> Result<(Model<T>, NormalizationStats), TrainError> {
    let model = load_checkpoint(&dir.join(CHECKPOINT_DIR))?;
    let path = dir.join(STATS_FILE);
    let text = fs::read(&path).map_err(io(&path))?;
    let stats = serde_json::from_slice(&text).map_err(|e| TrainError::Parse(format!("{}: {e}", path.display())))?;
    Ok((model, stats))
}
