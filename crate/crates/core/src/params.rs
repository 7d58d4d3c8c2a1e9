//! Named model parameters and the shared/task-specific partition.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};

use crate::tensor::Tensor;

/// Named parameter tensors. Iteration order is the name order, which keeps
/// every reduction over parameters deterministic.
#[derive(Clone, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

/// The disjoint split of trainable parameter names into shared θ_E and
/// task-specific θ_T. Frozen tensors (e.g. pretrained embeddings) belong
/// to neither set and are never updated.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Partition {
    pub shared: BTreeSet<String>,
    pub task_specific: BTreeSet<String>,
}

impl Partition {
    pub fn trainable(&self) -> impl Iterator<Item = &String> {
        self.shared.iter().chain(self.task_specific.iter())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.shared.contains(name) || self.task_specific.contains(name)
    }

    /// The two sets must be disjoint; enforced at model construction.
    pub fn assert_disjoint(&self) {
        assert!(
            self.shared.is_disjoint(&self.task_specific),
            "shared and task-specific parameter sets overlap"
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_disjointness_is_checked() {
        let mut p = Partition::default();
        p.shared.insert("enc.w".to_string());
        p.task_specific.insert("head.w".to_string());
        p.assert_disjoint();
        p.task_specific.insert("enc.w".to_string());
        let r = std::panic::catch_unwind(|| p.assert_disjoint());
        assert!(r.is_err());
    }
}
