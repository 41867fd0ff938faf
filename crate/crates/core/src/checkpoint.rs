//! Named-tensor checkpoints: a JSON manifest next to a flat little-endian f64 blob.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{ParamStore, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const FORMAT: &str = "sqgen-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// What the weights belong to, e.g. `"bert_pgn"`.
    pub kind: String,
    pub byte_order: String,
    pub dtype: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// Writes every tensor of `store` in store order.
pub fn save(dir: &Path, kind: &str, config: &impl Serialize, store: &ParamStore) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut tensors = Vec::with_capacity(store.len());
    let mut offset = 0;
    for id in store.ids() {
        let t = store.get(id);
        tensors.push(TensorEntry {
            name: store.name(id).to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        kind: kind.into(),
        byte_order: "little".into(),
        dtype: "f64".into(),
        config: serde_json::to_value(config)?,
        tensors,
    };
    fs::write(dir.join(WEIGHTS_FILE), blob)?;
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CheckpointError> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(CheckpointError::Malformed(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }
    if manifest.byte_order != "little" || manifest.dtype != "f64" {
        return Err(CheckpointError::Malformed(format!(
            "unsupported encoding {} {}",
            manifest.byte_order, manifest.dtype
        )));
    }
    Ok(manifest)
}

/// Reads the manifest and all tensors, checking that `kind` matches.
pub fn load(dir: &Path, kind: &str) -> Result<(Manifest, ParamStore), CheckpointError> {
    let manifest = read_manifest(dir)?;
    if manifest.kind != kind {
        return Err(CheckpointError::Malformed(format!(
            "expected a {kind} checkpoint, found {}",
            manifest.kind
        )));
    }
    let bytes = fs::read(dir.join(WEIGHTS_FILE))?;
    if bytes.len() % 8 != 0 {
        return Err(CheckpointError::Malformed("blob length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut store = ParamStore::new();
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| CheckpointError::Malformed(format!("tensor {} exceeds blob", e.name)))?;
        let tensor = Tensor::new(e.shape.clone(), data.to_vec())
            .map_err(|err| CheckpointError::Malformed(err.to_string()))?;
        if !tensor.is_finite() {
            return Err(CheckpointError::Malformed(format!("tensor {} is not finite", e.name)));
        }
        store
            .insert(e.name.clone(), tensor)
            .map_err(|err| CheckpointError::Malformed(err.to_string()))?;
    }
    Ok((manifest, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::new();
        store.insert("a", Tensor::new(vec![2, 2], vec![1.0, -0.5, 1e-300, 3.25]).unwrap()).unwrap();
        store.insert("b", Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap()).unwrap();
        save(dir.path(), "test", &serde_json::json!({"x": 1}), &store).unwrap();
        let (m, back) = load(dir.path(), "test").unwrap();
        assert_eq!(m.config["x"], 1);
        for id in store.ids() {
            assert_eq!(store.name(id), back.name(id));
            assert_eq!(store.get(id), back.get(id));
        }
        assert!(matches!(load(dir.path(), "other"), Err(CheckpointError::Malformed(_))));
    }
}
