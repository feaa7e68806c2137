//! Exhaustive grid search with validation precision@10 selection.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::ehr::{CodeVocabulary, Sample};
use crate::error::{Error, Result};

use super::config::ModelConfig;
use super::train::{train, TrainOptions, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub index: usize,
    pub overrides: Map<String, Value>,
    /// `None` when the point is not a valid configuration.
    pub val_precision_at_10: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub best_index: usize,
    pub best_config: ModelConfig,
}

/// Cartesian product of `space` (field → list of values) in field-name
/// order, the last field varying fastest.
pub fn expand_space(space: &Map<String, Value>) -> Result<Vec<Map<String, Value>>> {
    let mut points = vec![Map::new()];
    let mut keys: Vec<&String> = space.keys().collect();
    keys.sort();
    for key in keys {
        let values = space[key]
            .as_array()
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::Config(format!("search space entry {key:?} must be a non-empty list")))?;
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in values {
                let mut q = p.clone();
                q.insert(key.clone(), v.clone());
                next.push(q);
            }
        }
        points = next;
    }
    Ok(points)
}

pub fn apply_overrides(base: &ModelConfig, overrides: &Map<String, Value>) -> Result<ModelConfig> {
    let mut value = serde_json::to_value(base)?;
    let obj = value.as_object_mut().expect("config serializes to an object");
    for (k, v) in overrides {
        obj.insert(k.clone(), v.clone());
    }
    let cfg: ModelConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Trains every valid point and keeps the best by validation
/// precision@10; the earliest point wins ties. Invalid points (for example
/// a head count that does not divide the hidden width) are reported, not
/// trained.
pub fn grid_search(
    train_set: &[Sample],
    val_set: &[Sample],
    vocab: &CodeVocabulary,
    base: &ModelConfig,
    space: &Map<String, Value>,
    opts: &TrainOptions,
) -> Result<(TrainedModel, GridReport)> {
    let points = expand_space(space)?;
    let mut rows = Vec::with_capacity(points.len());
    let mut best: Option<(usize, TrainedModel)> = None;
    for (index, overrides) in points.into_iter().enumerate() {
        let cfg = match apply_overrides(base, &overrides) {
            Ok(c) => c,
            Err(e) => {
                rows.push(GridRow {
                    index,
                    overrides,
                    val_precision_at_10: None,
                    best_epoch: None,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        let trained = train(train_set, val_set, vocab, &cfg, opts)?;
        rows.push(GridRow {
            index,
            overrides,
            val_precision_at_10: Some(trained.best_val_metric),
            best_epoch: Some(trained.best_epoch),
            error: None,
        });
        if best.as_ref().is_none_or(|(_, b)| trained.best_val_metric > b.best_val_metric) {
            best = Some((index, trained));
        }
    }
    let (best_index, trained) =
        best.ok_or_else(|| Error::Config("no point of the search space is a valid configuration".into()))?;
    let report = GridReport {
        rows,
        best_index,
        best_config: trained.model.config.clone(),
    };
    Ok((trained, report))
}
