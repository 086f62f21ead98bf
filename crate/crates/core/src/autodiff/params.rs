//! Named parameter storage with a trainable/frozen tag per tensor.

use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered collection of named tensors. Insertion order is the
/// serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.id(&name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.iter()
            .filter(move |(_, p)| p.name.starts_with(prefix))
            .map(|(id, _)| id)
    }

    /// Total scalar count over parameters whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn frozen_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// SHA-256 over the name, shape and little-endian payload of one tensor.
    pub fn tensor_hash(&self, id: ParamId) -> [u8; 32] {
        let p = &self.params[id.0];
        let mut h = Sha256::new();
        h.update(p.name.as_bytes());
        for d in p.value.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        h.update(p.value.to_le_bytes());
        h.finalize().into()
    }

    /// Combined hash of every frozen tensor, in insertion order.
    pub fn frozen_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (id, p) in self.iter() {
            if !p.trainable {
                h.update(self.tensor_hash(id));
            }
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut set = ParamSet::new();
        set.insert("a", Tensor::zeros(&[2]), true).unwrap();
        assert!(set.insert("a", Tensor::zeros(&[2]), true).is_err());
    }

    #[test]
    fn counts_follow_tags() {
        let mut set = ParamSet::new();
        set.insert("x.a", Tensor::zeros(&[2, 3]), true).unwrap();
        set.insert("y.b", Tensor::zeros(&[4]), false).unwrap();
        assert_eq!(set.trainable_count(), 6);
        assert_eq!(set.frozen_count(), 4);
        assert_eq!(set.count_with_prefix("x."), 6);
    }

    #[test]
    fn frozen_hash_ignores_trainable_changes() {
        let mut set = ParamSet::new();
        let a = set.insert("a", Tensor::zeros(&[2]), true).unwrap();
        let b = set.insert("b", Tensor::zeros(&[2]), false).unwrap();
        let h0 = set.frozen_hash();
        set.value_mut(a).data_mut()[0] = 1.0;
        assert_eq!(h0, set.frozen_hash());
        set.value_mut(b).data_mut()[0] = 1.0;
        assert_ne!(h0, set.frozen_hash());
    }
}
