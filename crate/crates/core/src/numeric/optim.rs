//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{GradMap, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    /// A zero learning rate is accepted and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Optimizer(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be finite and non-negative, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Tensor,
    v: Tensor,
    step: u64,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Result<AdamW> {
        config.validate()?;
        Ok(AdamW {
            config,
            state: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    /// Number of updates applied to `name` so far.
    pub fn steps(&self, name: &str) -> u64 {
        self.state.get(name).map_or(0, |s| s.step)
    }

    /// One update. Parameters without a gradient entry are left untouched,
    /// including by weight decay. Nothing is modified if any gradient is
    /// non-finite or misshapen.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradMap) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Optimizer(format!("gradient for unknown parameter {name:?}")))?;
            if p.shape() != g.shape() {
                return Err(Error::Optimizer(format!(
                    "gradient shape {:?} does not match parameter {name:?} shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::Optimizer(format!("non-finite gradient for parameter {name:?}")));
            }
        }
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::new(g.shape().to_vec(), vec![0.0; g.numel()]).expect("shape"),
                v: Tensor::new(g.shape().to_vec(), vec![0.0; g.numel()]).expect("shape"),
                step: 0,
            });
            st.step += 1;
            let bc1 = 1.0 - beta1.powi(st.step as i32);
            let bc2 = 1.0 - beta2.powi(st.step as i32);
            let (m, v) = (st.m.data_mut(), st.v.data_mut());
            for (i, (theta, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                *theta -= lr * weight_decay * *theta;
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
