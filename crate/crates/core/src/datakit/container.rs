use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::record::{CaseMeta, CaseRecord, SCHEMA_VERSION};
use super::DataError;

pub const META_FILE: &str = "meta.json";
pub const FRAMES_FILE: &str = "frames.bin";
pub const MASK_FILE: &str = "mask.bin";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

fn staging_dir(dir: &Path) -> Result<PathBuf, DataError> {
    let name = dir
        .file_name()
        .ok_or_else(|| DataError::Invalid(format!("container path {} has no final component", dir.display())))?
        .to_string_lossy()
        .into_owned();
    let parent = dir.parent().unwrap_or_else(|| Path::new("."));
    Ok(parent.join(format!(".{name}.partial-{}", std::process::id())))
}

/// Writes the container into a staging directory and renames it into place,
/// so a reader never observes a half-written case.
pub fn write_container(record: &CaseRecord, dir: &Path) -> Result<(), DataError> {
    let staging = staging_dir(dir)?;
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    if let Some(parent) = dir.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    fs::create_dir(&staging).map_err(io_err(&staging))?;
    let result = (|| {
        let meta = serde_json::to_vec_pretty(&record.meta).map_err(|e| DataError::Parse(e.to_string()))?;
        fs::write(staging.join(META_FILE), meta).map_err(io_err(&staging))?;
        let mut bytes = Vec::with_capacity(record.frames().len() * 4);
        for v in record.frames() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let frames_path = staging.join(FRAMES_FILE);
        let mut f = fs::File::create(&frames_path).map_err(io_err(&frames_path))?;
        f.write_all(&bytes).map_err(io_err(&frames_path))?;
        f.sync_all().map_err(io_err(&frames_path))?;
        fs::write(staging.join(MASK_FILE), record.mask()).map_err(io_err(&staging))?;
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::rename(&staging, dir).map_err(io_err(dir))
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

pub fn read_meta(dir: &Path) -> Result<CaseMeta, DataError> {
    let path = dir.join(META_FILE);
    let text = fs::read(&path).map_err(io_err(&path))?;
    let value: serde_json::Value =
        serde_json::from_slice(&text).map_err(|e| DataError::Parse(format!("{}: {e}", path.display())))?;
    let found = value.get("schema_version").and_then(serde_json::Value::as_u64);
    if found != Some(SCHEMA_VERSION as u64) {
        return Err(DataError::SchemaVersion { found, expected: SCHEMA_VERSION });
    }
    serde_json::from_value(value).map_err(|e| DataError::Parse(format!("{}: {e}", path.display())))
}

pub fn read_container(dir: &Path) -> Result<CaseRecord, DataError> {
    let meta = read_meta(dir)?;
    let [h, w] = meta.resolution;
    let expected = meta.n_frames * meta.channels.len() * h * w * 4;
    let frames_path = dir.join(FRAMES_FILE);
    let bytes = fs::read(&frames_path).map_err(io_err(&frames_path))?;
    if bytes.len() < expected {
        return Err(DataError::Truncated { file: FRAMES_FILE, expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(DataError::ShapeMismatch(format!(
            "{FRAMES_FILE} holds {} bytes but meta describes {expected}",
            bytes.len()
        )));
    }
    let frames = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let mask_path = dir.join(MASK_FILE);
    let mask = fs::read(&mask_path).map_err(io_err(&mask_path))?;
    if mask.len() < h * w {
        return Err(DataError::Truncated { file: MASK_FILE, expected: h * w, found: mask.len() });
    }
    CaseRecord::new(meta, frames, mask)
}

/// Case directories (those holding a `meta.json`) directly under `root`, sorted by name.
pub fn list_cases(root: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if !hidden && path.is_dir() && path.join(META_FILE).is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
