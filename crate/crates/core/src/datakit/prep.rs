use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{fill_empty_cells, interpolate_to_grid};
use super::record::{CaseMeta, CaseRecord};
use super::DataError;
use crate::flowgen::build_geometry_mask;

/// Per-parameter min and max over the training cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationStats {
    pub fn from_training(omegas: &[Vec<f64>]) -> Result<Self, DataError> {
        let first = omegas.first().ok_or_else(|| DataError::EmptyInput("no training parameters".into()))?;
        let mut min = first.clone();
        let mut max = first.clone();
        for o in omegas {
            if o.len() != min.len() {
                return Err(DataError::ShapeMismatch(format!("parameter vectors of length {} and {}", min.len(), o.len())));
            }
            for (k, &v) in o.iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }
}

/// Min-max maps each parameter into `[0, 1]` over the training range; values
/// outside the range are not clipped and constant parameters map to 0.
pub fn normalize_params(omega: &[f64], stats: &NormalizationStats) -> Vec<f64> {
    omega
        .iter()
        .zip(stats.min.iter().zip(&stats.max))
        .map(|(&v, (&lo, &hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub ratio: [u32; 3],
}

impl DatasetSplit {
    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Shuffles case ids by seed and allocates `floor(n/10)` each to validation
/// and test; the remainder is training.
pub fn split_cases(case_ids: &[String], seed: u64) -> Result<DatasetSplit, DataError> {
    if case_ids.is_empty() {
        return Err(DataError::EmptyInput("no cases to split".into()));
    }
    let mut ids = case_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != case_ids.len() {
        return Err(DataError::Invalid("duplicate case ids".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_hold = ids.len() / 10;
    let test = ids.split_off(ids.len() - n_hold);
    let val = ids.split_off(ids.len() - n_hold);
    Ok(DatasetSplit { train: ids, val, test, seed, ratio: [8, 1, 1] })
}

/// One row of a scattered-point export.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
pub struct PointRow {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
}

pub fn read_points_csv(path: &Path) -> Result<Vec<PointRow>, DataError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| DataError::Parse(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| DataError::Parse(format!("{}: {e}", path.display()))))
        .collect()
}

/// Grids scattered per-frame samples into a record. `meta.n_frames` and the
/// channel list are derived from the data; the mask comes from the geometry.
pub fn ingest_points(mut meta: CaseMeta, rows: &[PointRow]) -> Result<CaseRecord, DataError> {
    let [h, w] = meta.resolution;
    let extents = (meta.extents_m[0], meta.extents_m[1]);
    let mut by_frame: BTreeMap<usize, Vec<&PointRow>> = BTreeMap::new();
    for r in rows {
        by_frame.entry(r.frame).or_default().push(r);
    }
    if by_frame.is_empty() {
        return Err(DataError::EmptyInput("no point rows".into()));
    }
    let mask = build_geometry_mask(&meta.params, (h, w)).map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut frames = Vec::with_capacity(by_frame.len() * 2 * h * w);
    for pts in by_frame.values() {
        for pick in [|r: &PointRow| r.u, |r: &PointRow| r.v] {
            let samples: Vec<(f64, f64, f64)> = pts.iter().map(|r| (r.x, r.y, pick(r))).collect();
            let grid = interpolate_to_grid(&samples, extents, (h, w))?;
            let filled = fill_empty_cells(&grid, (h, w))?;
            frames.extend(filled.iter().zip(&mask).map(|(&v, &m)| if m == 1 { v as f32 } else { 0.0 }));
        }
    }
    meta.n_frames = by_frame.len();
    meta.channels = vec!["u".into(), "v".into()];
    CaseRecord::new(meta, frames, mask)
}
