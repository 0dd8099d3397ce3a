//! Gridded case containers: interpolation, fill, padding, normalization, splits and persistence.

mod container;
mod dataset;
mod grid;
mod prep;
mod record;

use std::path::PathBuf;

pub use container::{list_cases, read_container, read_meta, write_container, FRAMES_FILE, MASK_FILE, META_FILE};
pub use dataset::{Dataset, SPLIT_FILE};
pub use grid::{fill_empty_cells, interpolate_to_grid, pad_constant_bc, pad_record};
pub use prep::{
    ingest_points, normalize_params, read_points_csv, split_cases, DatasetSplit, NormalizationStats, PointRow,
};
pub use record::{CaseMeta, CaseRecord, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported schema version {found:?} (expected {expected})")]
    SchemaVersion { found: Option<u64>, expected: u32 },
    #[error("{file} truncated: expected {expected} bytes, found {found}")]
    Truncated { file: &'static str, expected: usize, found: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("I/O error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}
