//! Named parameter tensors shared by the network modules.
//!
//! A [`ParamStore`] owns the master copies (f64). Each training step binds
//! the store onto a fresh tape, producing leaf tensors aligned with the
//! entry order; gradients and optimizer state use the same alignment.

use super::{Tape, Tensor};

#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> usize {
        self.add_entry(name, shape, data, true)
    }

    /// Entry excluded from gradient updates (e.g. normalization statistics).
    pub fn add_frozen(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> usize {
        self.add_entry(name, shape, data, false)
    }

    fn add_entry(&mut self, name: &str, shape: &[usize], data: Vec<f64>, trainable: bool) -> usize {
        assert!(
            self.index_of(name).is_none(),
            "duplicate parameter name {name}"
        );
        let shape = super::norm_shape(shape);
        assert_eq!(data.len(), shape[0] * shape[1], "param {name} data length");
        self.entries.push(ParamTensor {
            name: name.to_string(),
            shape,
            data,
            trainable,
        });
        self.entries.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn entry(&self, i: usize) -> &ParamTensor {
        &self.entries[i]
    }

    pub fn entry_mut(&mut self, i: usize) -> &mut ParamTensor {
        &mut self.entries[i]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.entries.iter()
    }

    pub fn value_count(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Record every entry on `tape`; output is aligned with entry indices.
    pub fn bind(&self, tape: &Tape) -> Vec<Tensor> {
        self.entries
            .iter()
            .map(|e| {
                if e.trainable {
                    tape.leaf(&e.data, &e.shape)
                } else {
                    tape.constant(&e.data, &e.shape)
                }
            })
            .collect()
    }

    /// Round every value through f32, matching what a checkpoint round-trip
    /// would produce. Keeps in-memory state and saved files in agreement.
    pub fn round_to_f32(&mut self) {
        for e in &mut self.entries {
            for v in &mut e.data {
                *v = *v as f32 as f64;
            }
        }
    }
}
