use crate::error::{Error, Result};
use crate::numerics::Matrix;
use std::collections::HashMap;

/// A named weight tensor with its trainability flag. The flag is the single
/// source of truth for what the optimizer touches and what parameter counts
/// report.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Matrix,
    pub trainable: bool,
}

/// Ordered collection of uniquely named tensors with name lookup.
/// Iteration order is insertion order, which fixes serialization layouts.
#[derive(Debug, Clone, Default)]
pub struct TensorStore {
    entries: Vec<NamedTensor>,
    index: HashMap<String, usize>,
}

impl TensorStore {
    pub fn new() -> Self {
        TensorStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate tensor name {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(NamedTensor {
            name,
            value,
            trainable,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedTensor> {
        self.index.get(name).map(|&i| &mut self.entries[i])
    }

    /// Lookup that treats absence as a broken internal contract.
    pub fn expect(&self, name: &str) -> Result<&NamedTensor> {
        self.get(name)
            .ok_or_else(|| Error::contract(format!("tensor {name} missing from store")))
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        Ok(&self.expect(name)?.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.get(name).map(|t| t.trainable).unwrap_or(false)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        match self.get_mut(name) {
            Some(t) => {
                t.trainable = trainable;
                Ok(())
            }
            None => Err(Error::contract(format!("tensor {name} missing from store"))),
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for t in &mut self.entries {
            t.trainable = trainable;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut NamedTensor> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|t| t.value.len()).sum()
    }

    /// Number of scalars in tensors flagged trainable.
    pub fn trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|t| t.trainable)
            .map(|t| t.value.len())
            .sum()
    }
}
