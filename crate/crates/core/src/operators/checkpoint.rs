use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{build_model, Model};
use super::spec::ModelSpec;
use super::OpError;
use crate::diffmath::Tensor;
use crate::scalar::Scalar;

pub const SPEC_FILE: &str = "spec.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Location of one parameter inside `weights.bin`; offsets count float32 values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> OpError + '_ {
    move |source| OpError::Io { path: path.to_path_buf(), source }
}

/// Writes `spec.json`, `weights.bin` (little-endian float32 in declaration order) and `manifest.json`.
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, dir: &Path) -> Result<(), OpError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut bytes = Vec::with_capacity(model.count_params() * 4);
    let mut manifest = Vec::new();
    let mut offset = 0;
    for (name, p) in model.names().iter().zip(model.params()) {
        manifest.push(ManifestEntry { name: name.clone(), offset, shape: p.shape().to_vec() });
        offset += p.numel();
        for v in p.data() {
            bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let write = |file: &str, data: &[u8]| {
        let path = dir.join(file);
        fs::write(&path, data).map_err(io(&path))
    };
    write(SPEC_FILE, &serde_json::to_vec_pretty(model.spec()).map_err(|e| OpError::Parse(e.to_string()))?)?;
    write(MANIFEST_FILE, &serde_json::to_vec_pretty(&manifest).map_err(|e| OpError::Parse(e.to_string()))?)?;
    write(WEIGHTS_FILE, &bytes)
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<Model<T>, OpError> {
    let read = |file: &str| {
        let path = dir.join(file);
        fs::read(&path).map_err(io(&path))
    };
    let spec: ModelSpec = serde_json::from_slice(&read(SPEC_FILE)?).map_err(|e| OpError::Parse(format!("{SPEC_FILE}: {e}")))?;
    let manifest: Vec<ManifestEntry> =
        serde_json::from_slice(&read(MANIFEST_FILE)?).map_err(|e| OpError::Parse(format!("{MANIFEST_FILE}: {e}")))?;
    let bytes = read(WEIGHTS_FILE)?;
    let mut model = build_model::<T>(&spec)?;
    if manifest.len() != model.names().len() {
        return Err(OpError::Parse(format!("manifest lists {} parameters, model has {}", manifest.len(), model.names().len())));
    }
    if bytes.len() != model.count_params() * 4 {
        return Err(OpError::Parse(format!("{WEIGHTS_FILE} holds {} bytes, expected {}", bytes.len(), model.count_params() * 4)));
    }
    for (i, entry) in manifest.iter().enumerate() {
        let expected = &model.params()[i];
        if entry.name != model.names()[i] || entry.shape != expected.shape() {
            return Err(OpError::Parse(format!("manifest entry {} ({}, {:?}) does not match the model", i, entry.name, entry.shape)));
        }
        let n = expected.numel();
        let data = bytes[entry.offset * 4..(entry.offset + n) * 4]
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        model.params_mut()[i] = Tensor::new(entry.shape.clone(), data)?;
    }
    Ok(model)
}
