//! Mini-batch AdamW training with validation-based model selection.

use std::path::PathBuf;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ehr::synth::splitmix64;
use crate::ehr::{CodeVocabulary, Sample};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::metrics::{mean_visit_precision_at_k, ScoredVisit};
use crate::numeric::{accumulate, AdamW, GradMap};
use crate::par::{self, Exec};

use super::config::ModelConfig;
use super::features::{prepare_samples, PreparedSample};
use super::network::Model;

/// Validation metric used for model selection.
pub const SELECTION_K: usize = 10;

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub exec: Exec,
    /// Line-delimited JSON, one record per epoch.
    pub log_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_precision_at_10: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub vocab: CodeVocabulary,
    pub vocab_fingerprint: String,
    /// 1-based epoch whose parameters were kept; 0 if no epoch ran.
    pub best_epoch: usize,
    pub best_val_metric: f64,
    pub history: Vec<EpochLog>,
}

/// Eval-mode scores for each prepared sample, in order.
pub fn score_prepared(model: &Model, samples: &[PreparedSample], exec: Exec) -> Result<Vec<ScoredVisit>> {
    par::try_map(exec, samples, |s| {
        Ok(ScoredVisit {
            target: s.target.clone(),
            scores: model.logits(s)?,
        })
    })
}

fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64((epoch as u64) << 32 | index as u64))
}

pub fn train(
    train: &[Sample],
    val: &[Sample],
    vocab: &CodeVocabulary,
    config: &ModelConfig,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    config.validate()?;
    let train = prepare_samples(opts.exec, train, vocab, config)?;
    let val = prepare_samples(opts.exec, val, vocab, config)?;
    train_prepared(&train, &val, vocab, config, opts)
}

pub fn train_prepared(
    train: &[PreparedSample],
    val: &[PreparedSample],
    vocab: &CodeVocabulary,
    config: &ModelConfig,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Argument(format!(
            "training needs non-empty splits, got {} train and {} validation samples",
            train.len(),
            val.len()
        )));
    }
    let mut model = Model::new(config, vocab)?;
    let mut opt = AdamW::new(config.optimizer())?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0x5eed));
    let mut best_params = model.params.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut log_lines = String::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = par::map(opts.exec, batch, |&i| {
                model.loss_and_grads(&train[i], Some(sample_seed(config.seed, epoch, i)))
            });
            let mut grads = GradMap::new();
            for r in results {
                let (loss, g) = r.map_err(|e| match e {
                    Error::Numeric { layer } => Error::Training {
                        epoch,
                        message: format!("non-finite activations in layer {layer}"),
                    },
                    other => other,
                })?;
                if !loss.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        message: "loss diverged to a non-finite value".into(),
                    });
                }
                epoch_loss += loss;
                accumulate(&mut grads, &g);
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grads.values_mut() {
                g.scale_in_place(scale);
            }
            opt.step(&mut model.params, &grads).map_err(|e| Error::Training {
                epoch,
                message: e.to_string(),
            })?;
        }
        epoch_loss /= train.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: "loss diverged to a non-finite value".into(),
            });
        }
        let scored = score_prepared(&model, val, opts.exec)?;
        let val_metric = mean_visit_precision_at_k(&scored, SELECTION_K)?;
        let entry = EpochLog {
            epoch,
            loss: epoch_loss,
            val_precision_at_10: val_metric,
        };
        info!("epoch {epoch}: loss {epoch_loss:.5}, val precision@10 {val_metric:.4}");
        if let Some(path) = &opts.log_path {
            log_lines.push_str(&serde_json::to_string(&entry)?);
            log_lines.push('\n');
            write_atomic(path, log_lines.as_bytes())?;
        }
        history.push(entry);
        if val_metric > best_val {
            best_val = val_metric;
            best_epoch = epoch;
            best_params = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    model.params = best_params;
    if best_epoch == 0 {
        let scored = score_prepared(&model, val, opts.exec)?;
        best_val = mean_visit_precision_at_k(&scored, SELECTION_K)?;
    }
    Ok(TrainedModel {
        model,
        vocab: vocab.clone(),
        vocab_fingerprint: vocab.fingerprint(),
        best_epoch,
        best_val_metric: best_val,
        history,
    })
}
