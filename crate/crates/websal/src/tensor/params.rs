//! Named parameter registry.
//!
//! Networks register every weight, bias and batch-norm buffer here under a
//! dotted path ("stage1.encoder.conv3.weight"). A name can also be an
//! alias of an earlier entry, in which case both names resolve to the same
//! storage — that is how the two generator stages share layers. Iteration
//! follows insertion order everywhere so optimizer updates and checkpoint
//! layout are deterministic.

use std::collections::HashMap;

use super::{Tensor, TensorError};

#[derive(Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under a fresh name.
    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<(), TensorError> {
        if self.index.contains_key(name) {
            return Err(TensorError::BadName {
                name: name.to_string(),
                problem: "is already registered",
            });
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    /// Register `name` as another handle on `target`'s storage.
    pub fn alias(&mut self, name: &str, target: &str) -> Result<(), TensorError> {
        let t = self.require(target)?.clone();
        self.insert(name, t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor, TensorError> {
        self.get(name).ok_or_else(|| TensorError::BadName {
            name: name.to_string(),
            problem: "is not registered",
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All entries (aliases included) in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// One entry per distinct storage, keyed by the first name it was
    /// registered under; aliases are skipped.
    pub fn unique(&self) -> Vec<(&str, &Tensor)> {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for (name, t) in &self.entries {
            if seen.insert(t.storage_id(), ()).is_none() {
                out.push((name.as_str(), t));
            }
        }
        out
    }

    /// Names that are aliases, paired with the canonical (first) name of
    /// their storage.
    pub fn alias_pairs(&self) -> Vec<(&str, &str)> {
        let mut first: HashMap<usize, &str> = HashMap::new();
        let mut out = Vec::new();
        for (name, t) in &self.entries {
            match first.get(&t.storage_id()) {
                Some(canon) => out.push((name.as_str(), *canon)),
                None => {
                    first.insert(t.storage_id(), name.as_str());
                }
            }
        }
        out
    }

    /// Do two names resolve to the same storage?
    pub fn same_storage(&self, a: &str, b: &str) -> bool {
        match (self.get(a), self.get(b)) {
            (Some(x), Some(y)) => x.storage_id() == y.storage_id(),
            _ => false,
        }
    }

    pub fn zero_grad_all(&self) {
        for (_, t) in self.unique() {
            t.zero_grad();
        }
    }

    /// Count of stored values across distinct trainable tensors.
    pub fn trainable_values(&self) -> usize {
        self.unique()
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(_, t)| t.shape().len())
            .sum()
    }

    /// Clamp the values of every distinct tensor whose name passes the
    /// filter. Used for critic weight clipping.
    pub fn clamp_values(&self, select: impl Fn(&str) -> bool, lo: f64, hi: f64) {
        for (name, t) in self.unique() {
            if t.requires_grad() && select(name) {
                t.update_data(|d| {
                    for v in d.iter_mut() {
                        *v = v.clamp(lo, hi);
                    }
                });
            }
        }
    }

    /// L2 norm of each distinct tensor's gradient, for diagnostics.
    /// Tensors with no gradient report NaN so they stand out.
    pub fn grad_norms(&self, select: impl Fn(&str) -> bool) -> Vec<(String, f64)> {
        self.unique()
            .iter()
            .filter(|(n, t)| t.requires_grad() && select(n))
            .map(|(n, t)| {
                let norm = match t.grad() {
                    Some(g) => g.iter().map(|v| v * v).sum::<f64>().sqrt(),
                    None => f64::NAN,
                };
                (n.to_string(), norm)
            })
            .collect()
    }

    /// Round every stored value to f32 and back. Saving a checkpoint does
    /// this so the live run and a later resume see identical numbers.
    pub fn round_to_f32(&self) {
        for (_, t) in self.unique() {
            t.update_data(|d| {
                for v in d.iter_mut() {
                    *v = *v as f32 as f64;
                }
            });
        }
    }
}
