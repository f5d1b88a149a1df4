//! Named parameter storage shared by every layer of a model.

use std::sync::Arc;

use crate::container::{Container, Entry};
use crate::error::{bail, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Slot {
    name: String,
    value: Arc<Tensor>,
    trainable: bool,
}

/// Owns every tensor a model needs at inference time: trainable weights and
/// non-trainable buffers (batch-norm running statistics, feature
/// standardization). Layers keep [`ParamId`]s into the store.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(self.find(name).is_none(), "parameter {name} registered twice");
        self.slots.push(Slot {
            name: name.to_string(),
            value: Arc::new(value),
            trainable,
        });
        ParamId(self.slots.len() - 1)
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, false)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.slots[id.0].value)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.slots[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.slots.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.is_trainable(id)).collect()
    }

    /// Trainable ids whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| self.is_trainable(id) && self.name(id).starts_with(prefix))
            .collect()
    }

    pub fn numel(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.get(id).numel()).sum()
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.slots[id.0];
        if slot.value.shape() != value.shape() {
            bail!(
                Dimension,
                "parameter {} has shape {:?}, refusing {:?}",
                slot.name,
                slot.value.shape(),
                value.shape()
            );
        }
        slot.value = Arc::new(value);
        Ok(())
    }

    /// Mutable access for in-place updates; copies only if a tape still
    /// holds the old value.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.slots[id.0].value)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        for s in &self.slots {
            c.push(Entry::new(s.name.clone(), (*s.value).clone()));
        }
        c
    }

    /// Overwrites every parameter from a container produced by
    /// [`ParamStore::to_container`] for the same architecture.
    pub fn load_container(&mut self, c: &Container) -> Result<()> {
        if c.len() != self.slots.len() {
            bail!(Data, "checkpoint holds {} tensors, model expects {}", c.len(), self.slots.len());
        }
        for i in 0..self.slots.len() {
            let name = self.slots[i].name.clone();
            let Some(entry) = c.get(&name) else {
                bail!(Data, "checkpoint is missing tensor {name}");
            };
            self.set(ParamId(i), entry.tensor.clone())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_selection_skips_buffers() {
        let mut s = ParamStore::new();
        let a = s.add("audio.w", Tensor::zeros(&[2, 2]));
        s.add_buffer("audio.bn.mean", Tensor::zeros(&[2]));
        s.add("text.w", Tensor::zeros(&[2]));
        assert_eq!(s.ids_with_prefix("audio."), vec![a]);
        assert_eq!(s.trainable_ids().len(), 2);
    }

    #[test]
    fn set_rejects_shape_change() {
        let mut s = ParamStore::new();
        let a = s.add("w", Tensor::zeros(&[2, 2]));
        assert!(s.set(a, Tensor::zeros(&[4])).is_err());
    }
}
