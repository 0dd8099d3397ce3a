//! Baseline neural operators with parameter conditioning and exact parameter accounting.

mod checkpoint;
mod inputs;
mod layers;
mod model;
mod spec;

use std::path::PathBuf;

pub use checkpoint::{load_checkpoint, save_checkpoint, ManifestEntry, MANIFEST_FILE, SPEC_FILE, WEIGHTS_FILE};
pub use inputs::{cell_coord, field_batch, push_field_channels, u_sample};
pub use model::{build_model, Model, ModelInput};
pub use spec::{sample_lattice, Architecture, InputStyle, ModelKind, ModelSpec};

use crate::diffmath::DiffError;

#[derive(Debug, thiserror::Error)]
pub enum OpError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid model input: {0}")]
    Input(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("I/O error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}
