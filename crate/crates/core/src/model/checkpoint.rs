//! Trained-model checkpoint directories.
//!
//! Layout: `manifest.json` + `params.bin` (parameters), `config.json`,
//! `vocab.json` and `model.json` (selection metadata and training history).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ehr::CodeVocabulary;
use crate::error::{Error, Result};
use crate::io_util::write_json_atomic;
use crate::numeric::{load_params, save_params};

use super::config::ModelConfig;
use super::network::Model;
use super::train::{EpochLog, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    n_labels: usize,
    vocab_sizes: [usize; 3],
    vocab_fingerprint: String,
    param_checksum: String,
    best_epoch: usize,
    best_val_metric: f64,
    history: Vec<EpochLog>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn save_trained(dir: &Path, trained: &TrainedModel) -> Result<()> {
    let m = &trained.model;
    save_params(dir, &m.params)?;
    write_json_atomic(&dir.join("config.json"), &m.config)?;
    write_json_atomic(&dir.join("vocab.json"), &trained.vocab)?;
    let meta = ModelMeta {
        n_labels: m.n_labels,
        vocab_sizes: m.vocab_sizes,
        vocab_fingerprint: trained.vocab_fingerprint.clone(),
        param_checksum: m.params.checksum(),
        best_epoch: trained.best_epoch,
        best_val_metric: trained.best_val_metric,
        history: trained.history.clone(),
    };
    write_json_atomic(&dir.join("model.json"), &meta)
}

pub fn load_trained(dir: &Path) -> Result<TrainedModel> {
    let params = load_params(dir)?;
    let config: ModelConfig = read_json(&dir.join("config.json"))?;
    config.validate()?;
    let vocab: CodeVocabulary = read_json(&dir.join("vocab.json"))?;
    let meta: ModelMeta = read_json(&dir.join("model.json"))?;
    if vocab.fingerprint() != meta.vocab_fingerprint {
        return Err(Error::Checkpoint("vocabulary does not match the recorded fingerprint".into()));
    }
    if params.checksum() != meta.param_checksum {
        return Err(Error::Checkpoint("parameters do not match the recorded checksum".into()));
    }
    let reference = Model::new(&config, &vocab)?;
    for (name, t) in reference.params.iter() {
        match params.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            Some(p) => {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, config implies {:?}",
                    p.shape(),
                    t.shape()
                )))
            }
            None => return Err(Error::Checkpoint(format!("parameter {name} missing"))),
        }
    }
    if params.len() != reference.params.len() {
        return Err(Error::Checkpoint("checkpoint holds parameters the config does not use".into()));
    }
    Ok(TrainedModel {
        model: Model {
            config,
            params,
            n_labels: meta.n_labels,
            vocab_sizes: meta.vocab_sizes,
        },
        vocab,
        vocab_fingerprint: meta.vocab_fingerprint,
        best_epoch: meta.best_epoch,
        best_val_metric: meta.best_val_metric,
        history: meta.history,
    })
}
