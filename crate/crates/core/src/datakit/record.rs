use serde::{Deserialize, Serialize};

use super::DataError;
use crate::flowgen::{OperatingParams, Problem, Subset};

pub const SCHEMA_VERSION: u32 = 1;

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseMeta {
    pub schema_version: u32,
    pub problem: Problem,
    pub subset: Option<Subset>,
    pub case_id: String,
    pub params: OperatingParams,
    /// Interval between consecutive frames, in seconds.
    pub dt: f64,
    /// Physical size as `[height, width]` in metres.
    pub extents_m: [f64; 2],
    /// Grid as `[H, W]`; row 0 is the bottom of the domain.
    pub resolution: [usize; 2],
    pub n_frames: usize,
    pub channels: Vec<String>,
    #[serde(default)]
    pub flags: serde_json::Map<String, serde_json::Value>,
}

/// One case: metadata, `[T][C][H][W]` frames and a `[H][W]` fluid mask.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseRecord {
    pub meta: CaseMeta,
    frames: Vec<f32>,
    mask: Vec<u8>,
}

impl CaseRecord {
    pub fn new(meta: CaseMeta, frames: Vec<f32>, mask: Vec<u8>) -> Result<Self, DataError> {
        let [h, w] = meta.resolution;
        let c = meta.channels.len();
        if meta.n_frames < 2 {
            return Err(DataError::Invalid(format!("{} frames; at least 2 required", meta.n_frames)));
        }
        if c < 2 || meta.channels[0] != "u" || meta.channels[1] != "v" || (c == 3 && meta.channels[2] != "p") || c > 3 {
            return Err(DataError::Invalid(format!("channel list {:?} must be [u, v] or [u, v, p]", meta.channels)));
        }
        if frames.len() != meta.n_frames * c * h * w {
            return Err(DataError::ShapeMismatch(format!(
                "{} frame values for {} x {c} x {h} x {w}",
                frames.len(),
                meta.n_frames
            )));
        }
        if mask.len() != h * w {
            return Err(DataError::ShapeMismatch(format!("mask of {} cells for a {h} x {w} grid", mask.len())));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(DataError::Invalid("mask values must be 0 or 1".into()));
        }
        if let Some(k) = frames.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Invalid(format!("non-finite frame value at flat index {k}")));
        }
        Ok(Self { meta, frames, mask })
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn n_frames(&self) -> usize {
        self.meta.n_frames
    }

    pub fn channels(&self) -> usize {
        self.meta.channels.len()
    }

    pub fn height(&self) -> usize {
        self.meta.resolution[0]
    }

    pub fn width(&self) -> usize {
        self.meta.resolution[1]
    }

    pub fn frame_len(&self) -> usize {
        self.channels() * self.height() * self.width()
    }

    /// Frame `t` as `[C][H][W]`.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    /// The `u, v` planes of frame `t`.
    pub fn velocity(&self, t: usize) -> &[f32] {
        let hw = self.height() * self.width();
        &self.frame(t)[..2 * hw]
    }

    pub fn omega(&self) -> Vec<f64> {
        self.meta.params.omega()
    }

    pub fn problem(&self) -> Problem {
        self.meta.problem
    }

    pub fn into_parts(self) -> (CaseMeta, Vec<f32>, Vec<u8>) {
        (self.meta, self.frames, self.mask)
    }
}
