//! Named parameter storage with gradients.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::tensor::{Scalar, Tensor};

/// A named learnable array and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

/// Ordered collection of parameters. Insertion order defines the manifest
/// order used by checkpoints, so it must be deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S: Scalar> {
    entries: Vec<Parameter<S>>,
    by_name: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<usize> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name: {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        let idx = self.entries.len();
        self.by_name.insert(name.clone(), idx);
        self.entries.push(Parameter { name, value, grad });
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<S>> {
        self.by_name.get(name).map(|&i| &self.entries[i])
    }

    pub fn entry(&self, idx: usize) -> &Parameter<S> {
        &self.entries[idx]
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut Parameter<S> {
        &mut self.entries[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<S>> {
        self.entries.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            for g in p.grad.data_mut() {
                *g = S::zero();
            }
        }
    }

    /// Name and shape of every parameter, in insertion order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect()
    }

    pub fn manifest_matches(&self, other: &ParamStore<S>) -> bool {
        self.manifest() == other.manifest()
    }

    /// Element-wise cast of values (gradients are reset to zero).
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for p in &self.entries {
            out.add(p.name.clone(), p.value.cast::<T>())
                .expect("names already unique");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a.weight", Tensor::zeros(&[2, 2])).unwrap();
        assert!(s.add("a.weight", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn manifest_preserves_insertion_order() {
        let mut s = ParamStore::<f32>::new();
        s.add("z", Tensor::zeros(&[1])).unwrap();
        s.add("a", Tensor::zeros(&[2])).unwrap();
        let m = s.manifest();
        assert_eq!(m[0].0, "z");
        assert_eq!(m[1].0, "a");
    }
}
