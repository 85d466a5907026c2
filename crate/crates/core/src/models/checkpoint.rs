//! Parameter checkpoints: `manifest.json`, `index.json` (name -> shape) and
//! one little-endian `f64` file per parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelKind;
use crate::diffcore::{ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: ModelKind,
    pub n_users: usize,
    pub n_items: usize,
    pub n_features: usize,
    pub hyperparameters: serde_json::Value,
    pub seed: u64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: [usize; 2],
    file: String,
}

/// Writes a parameter set (no manifest) into `dir`.
pub fn save_params(dir: impl AsRef<Path>, params: &ParamSet) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut index = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        let file = format!("{name}.bin");
        let mut bytes = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(&file), bytes)?;
        index.push(IndexEntry {
            name: name.to_string(),
            shape: t.shape(),
            file,
        });
    }
    fs::write(dir.join("index.json"), serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

pub fn load_params(dir: impl AsRef<Path>) -> Result<ParamSet> {
    let dir = dir.as_ref();
    let index: Vec<IndexEntry> = serde_json::from_slice(&fs::read(dir.join("index.json"))?)?;
    let mut params = ParamSet::new();
    for e in index {
        let path = dir.join(&e.file);
        let bytes = fs::read(&path)?;
        let [rows, cols] = e.shape;
        if bytes.len() != rows * cols * 8 {
            return Err(Error::Format {
                path,
                msg: format!("expected {} bytes, found {}", rows * cols * 8, bytes.len()),
            });
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.push(e.name, Tensor::new(rows, cols, data)?);
    }
    Ok(params)
}

pub fn save_checkpoint(dir: impl AsRef<Path>, manifest: &CheckpointManifest, params: &ParamSet) -> Result<()> {
    let dir = dir.as_ref();
    save_params(dir, params)?;
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(CheckpointManifest, ParamSet)> {
    let dir = dir.as_ref();
    let manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    Ok((manifest, load_params(dir)?))
}
