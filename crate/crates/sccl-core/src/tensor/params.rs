//! Named trainable parameters with gradient buffers.

use std::collections::BTreeMap;

use crate::error::{Result, ScclError};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
}

/// All trainable tensors of a model, keyed by checkpoint name. Iteration
/// order is the sorted name order, which keeps optimizer updates and
/// serialization deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name.into(), ParamEntry { value, grad });
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| ScclError::Config(format!("unknown parameter {name:?}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            for g in e.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, delta: &Tensor, scale: f64) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| ScclError::Config(format!("unknown parameter {name:?}")))?;
        e.grad.add_assign_scaled(delta, scale);
        Ok(())
    }

    pub fn scale_grads(&mut self, k: f64) {
        for e in self.entries.values_mut() {
            for g in e.grad.data_mut() {
                *g *= k;
            }
        }
    }

    /// Zero the gradient of one row of a rank-2 parameter (used to keep the
    /// PAD embedding fixed).
    pub fn mask_grad_row(&mut self, name: &str, row: usize) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| ScclError::Config(format!("unknown parameter {name:?}")))?;
        let w = e.grad.dim(1);
        for g in &mut e.grad.data_mut()[row * w..(row + 1) * w] {
            *g = 0.0;
        }
        Ok(())
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }
}
