//! Flat model and training configuration.

use serde::{Deserialize, Serialize};

use crate::ehr::{CodeKind, SplitRatios};
use crate::error::{Error, Result};
use crate::graph::MetaPath;
use crate::layer::{Activation, GammaMode, LayerSpec};
use crate::numeric::AdamWConfig;
use crate::spatial::MetaPaths;
use crate::temporal::Time2VecDims;

/// Every knob of the model and its training loop, as one flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Code embedding width before spatial encodings are appended.
    pub embedding_dim: usize,
    /// Laplacian and random-walk encoding width `k` (each).
    pub se_dim: usize,
    /// Time2Vec width; also the width of the sequence-encoder block.
    pub te_dim: usize,
    /// Number of Time2Vec entries that stay linear; `None` splits evenly.
    pub te_linear_dim: Option<usize>,
    /// Frequencies in the functional time encoding (output has twice this).
    pub time_factor_dim: usize,
    pub use_se: bool,
    pub use_te: bool,
    pub use_seq: bool,
    pub gamma: f64,
    pub learnable_gamma: bool,
    pub activation: Activation,
    pub update_events: bool,
    pub visit_edge_time_factor: bool,
    pub metapath_diagnosis: Option<Vec<CodeKind>>,
    pub metapath_procedure: Option<Vec<CodeKind>>,
    pub metapath_medication: Option<Vec<CodeKind>>,
    pub label_groups: usize,

    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    /// Restrict values to the standard hyper-parameter search space.
    pub grid_mode: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 64,
            layers: 2,
            heads: 4,
            dropout: 0.1,
            embedding_dim: 64,
            se_dim: 8,
            te_dim: 16,
            te_linear_dim: None,
            time_factor_dim: 8,
            use_se: true,
            use_te: true,
            use_seq: true,
            gamma: 0.5,
            learnable_gamma: false,
            activation: Activation::Gelu,
            update_events: false,
            visit_edge_time_factor: false,
            metapath_diagnosis: None,
            metapath_procedure: None,
            metapath_medication: None,
            label_groups: 50,
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            epochs: 30,
            patience: 5,
            seed: 0,
            train_ratio: 0.75,
            val_ratio: 0.10,
            test_ratio: 0.15,
            grid_mode: false,
        }
    }
}

const GRID_LR: [f64; 3] = [1e-2, 5e-3, 1e-3];
const GRID_BATCH: [usize; 3] = [64, 128, 256];
const GRID_HEADS: [usize; 5] = [1, 2, 4, 6, 8];
const GRID_LAYERS: [usize; 4] = [1, 2, 4, 6];
const GRID_HIDDEN: [usize; 3] = [64, 128, 256];
const GRID_SE: [usize; 4] = [4, 8, 12, 16];
const GRID_TE: [usize; 3] = [8, 16, 32];
const GRID_DROPOUT_MAX: f64 = 0.6;

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<ModelConfig> {
        let cfg: ModelConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden_dim == 0 || self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "hidden_dim {} must be a positive multiple of heads {}",
                self.hidden_dim, self.heads
            ));
        }
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.embedding_dim == 0 || self.time_factor_dim == 0 {
            return bad("embedding_dim and time_factor_dim must be positive".into());
        }
        if self.use_se && self.se_dim == 0 {
            return bad("se_dim must be positive when use_se is on".into());
        }
        if (self.use_te || self.use_seq) && self.te_dim == 0 {
            return bad("te_dim must be positive when use_te or use_seq is on".into());
        }
        if let Some(l) = self.te_linear_dim {
            if l > self.te_dim {
                return bad(format!("te_linear_dim {l} exceeds te_dim {}", self.te_dim));
            }
        }
        if self.label_groups == 0 {
            return bad("label_groups must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        self.layer_spec(0).validate()?;
        self.optimizer().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.split_ratios().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.metapaths()?;
        if self.grid_mode {
            self.validate_grid()?;
        }
        Ok(())
    }

    /// Checks membership in the standard search space.
    pub fn validate_grid(&self) -> Result<()> {
        fn member<T: PartialEq + std::fmt::Debug>(name: &str, v: T, set: &[T]) -> Result<()> {
            if set.contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v:?} is outside the search space {set:?}")))
            }
        }
        member("lr", self.lr, &GRID_LR)?;
        member("batch_size", self.batch_size, &GRID_BATCH)?;
        member("heads", self.heads, &GRID_HEADS)?;
        member("layers", self.layers, &GRID_LAYERS)?;
        member("hidden_dim", self.hidden_dim, &GRID_HIDDEN)?;
        member("se_dim", self.se_dim, &GRID_SE)?;
        member("te_dim", self.te_dim, &GRID_TE)?;
        if !(0.0..=GRID_DROPOUT_MAX).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout = {} is outside the search range [0, {GRID_DROPOUT_MAX}]",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn layer_spec(&self, index: usize) -> LayerSpec {
        LayerSpec {
            index,
            d: self.hidden_dim,
            heads: self.heads,
            gamma: if self.learnable_gamma {
                GammaMode::Learnable
            } else {
                GammaMode::Fixed(self.gamma)
            },
            activation: self.activation,
            update_events: self.update_events,
            visit_edge_time_factor: self.visit_edge_time_factor,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train_ratio,
            val: self.val_ratio,
            test: self.test_ratio,
        }
    }

    pub fn time2vec_dims(&self) -> Time2VecDims {
        match self.te_linear_dim {
            Some(l) => Time2VecDims {
                d_linear: l,
                d_periodic: self.te_dim - l,
            },
            None => Time2VecDims {
                d_linear: self.te_dim / 2,
                d_periodic: self.te_dim - self.te_dim / 2,
            },
        }
    }

    pub fn metapaths(&self) -> Result<MetaPaths> {
        let pick = |kind: CodeKind, custom: &Option<Vec<CodeKind>>| -> Result<MetaPath> {
            match custom {
                Some(kinds) => MetaPath::new(kinds.clone()).map_err(|e| Error::Config(e.to_string())),
                None => Ok(MetaPath::default_for(kind)),
            }
        };
        MetaPaths::new([
            pick(CodeKind::Diagnosis, &self.metapath_diagnosis)?,
            pick(CodeKind::Procedure, &self.metapath_procedure)?,
            pick(CodeKind::Medication, &self.metapath_medication)?,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ModelConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = ModelConfig::from_json(r#"{"hidden_dim": 32, "heads": 2, "use_se": false}"#).unwrap();
        assert_eq!(c.hidden_dim, 32);
        assert!(!c.use_se);
        assert_eq!(c.layers, 2);
    }

    #[test]
    fn unknown_fields_and_bad_values_rejected() {
        assert!(ModelConfig::from_json(r#"{"hiden_dim": 32}"#).is_err());
        assert!(ModelConfig::from_json(r#"{"hidden_dim": 30, "heads": 4}"#).is_err());
        assert!(ModelConfig::from_json(r#"{"dropout": 1.0}"#).is_err());
    }

    #[test]
    fn grid_mode_enforces_search_space() {
        let mut c = ModelConfig {
            grid_mode: true,
            ..ModelConfig::default()
        };
        c.validate().unwrap();
        c.lr = 2e-3;
        assert!(c.validate().is_err());
        c.lr = 1e-3;
        c.dropout = 0.7;
        assert!(c.validate().is_err());
        c.dropout = 0.6;
        c.validate().unwrap();
        c.hidden_dim = 32;
        c.heads = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn metapath_override_checked() {
        let c = ModelConfig {
            metapath_procedure: Some(vec![CodeKind::Diagnosis, CodeKind::Diagnosis]),
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
