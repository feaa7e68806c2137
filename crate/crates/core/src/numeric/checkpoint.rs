//! Parameter checkpoints: a JSON manifest plus one little-endian blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::io_util::{write_atomic, write_json_atomic};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub entries: Vec<CheckpointEntry>,
    pub total_bytes: u64,
    pub checksum: String,
}

/// Writes `manifest.json` and `params.bin` into `dir`, creating it if needed.
pub fn save_params(dir: &Path, params: &ParamStore) -> Result<CheckpointManifest> {
    let mut blob = Vec::with_capacity(params.n_scalars() * 8);
    let mut entries = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        entries.push(CheckpointEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: "f64".into(),
            offset: blob.len() as u64,
        });
        for x in t.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        entries,
        total_bytes: blob.len() as u64,
        checksum: params.checksum(),
    };
    write_atomic(&dir.join(PARAMS_FILE), &blob)?;
    write_json_atomic(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_params(dir: &Path) -> Result<ParamStore> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", mpath.display())))?;
    let bpath = dir.join(PARAMS_FILE);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    if blob.len() as u64 != manifest.total_bytes {
        return Err(Error::Checkpoint(format!(
            "blob has {} bytes, manifest expects {}",
            blob.len(),
            manifest.total_bytes
        )));
    }
    let mut store = ParamStore::new();
    for e in &manifest.entries {
        if e.dtype != "f64" {
            return Err(Error::Checkpoint(format!("unsupported dtype {:?} for {}", e.dtype, e.name)));
        }
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * 8;
        let bytes = blob
            .get(start..end)
            .ok_or_else(|| Error::Checkpoint(format!("entry {} overruns the blob", e.name)))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| Error::Checkpoint(err.to_string()))?;
        store.insert(e.name.clone(), t).map_err(|err| Error::Checkpoint(err.to_string()))?;
    }
    if store.checksum() != manifest.checksum {
        return Err(Error::Checkpoint("parameter checksum mismatch".into()));
    }
    Ok(store)
}
