//! Named parameter storage and per-parameter gradients.

use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};

use super::tape::Var;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, Tensor>;

/// Parameters in name order; iteration order is stable across runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("parameter {name:?} registered twice")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.params {
            h.update(name.as_bytes());
            h.update([0u8]);
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &x in t.data() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Zero tensors shaped like every parameter.
    pub fn zeros_like(&self) -> GradMap {
        self.params
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::new(t.shape().to_vec(), vec![0.0; t.numel()]).expect("shape")))
            .collect()
    }
}

/// Result of a reverse pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    params: GradMap,
    leaves: HashMap<usize, Tensor>,
}

impl Gradients {
    pub(crate) fn new(params: GradMap, leaves: HashMap<usize, Tensor>) -> Gradients {
        Gradients { params, leaves }
    }

    /// Gradient with respect to a leaf var, if it received any.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.index())
    }

    pub fn params(&self) -> &GradMap {
        &self.params
    }

    /// Parameter gradients with zeros for parameters absent from the tape.
    pub fn complete(self, store: &ParamStore) -> GradMap {
        let mut out = store.zeros_like();
        for (k, g) in self.params {
            out.insert(k, g);
        }
        out
    }
}

/// Adds `src` into `dst` name by name.
pub fn accumulate(dst: &mut GradMap, src: &GradMap) {
    for (k, g) in src {
        match dst.get_mut(k) {
            Some(d) => d.add_assign(g),
            None => {
                dst.insert(k.clone(), g.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(s.insert("a", Tensor::scalar(2.0)), Err(Error::Config(_))));
    }

    #[test]
    fn checksum_tracks_values() {
        let mut a = ParamStore::new();
        a.insert("w", Tensor::row(vec![1.0, 2.0])).unwrap();
        let b = a.clone();
        assert_eq!(a.checksum(), b.checksum());
        a.get_mut("w").unwrap().data_mut()[1] = 2.0 + 1e-15;
        assert_ne!(a.checksum(), b.checksum());
    }
}
