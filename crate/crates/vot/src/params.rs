//! Named parameter storage shared by the encoder, decoder, and head.
//!
//! Entries keep insertion order; the checkpoint format and the optimizer both
//! rely on that order being stable across save/load. Frozen entries (the toy
//! encoder) are bound to tapes as constants, so they can never receive
//! gradients, and the optimizer skips them.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numerics::{Tape, Tensor};

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub frozen: bool,
}

#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f64>, frozen: bool) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "{name}: shape {shape:?} does not match data length {}",
            data.len()
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry { name: name.to_string(), shape: shape.to_vec(), data, frozen });
    }

    /// Seeded Gaussian entry with standard deviation `std`.
    pub fn insert_gaussian(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f64,
        rng: &mut ChaCha8Rng,
        frozen: bool,
    ) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> =
            (0..n).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * std).collect();
        self.insert(name, shape, data, frozen);
    }

    pub fn get(&self, name: &str) -> &ParamEntry {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.entries[i]
    }

    pub fn data_mut(&mut self, name: &str) -> &mut Vec<f64> {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.entries[i].data
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn trainable(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter().filter(|e| !e.frozen)
    }

    pub fn trainable_len(&self) -> usize {
        self.trainable().map(|e| e.data.len()).sum()
    }

    /// Binds every entry onto `tape`: trainable entries as gradient leaves,
    /// frozen ones as constants.
    pub fn bind(&self, tape: &Tape) -> BoundParams {
        let mut tensors = HashMap::with_capacity(self.entries.len());
        for e in &self.entries {
            let t = if e.frozen {
                Tensor::constant(&e.shape, e.data.clone())
            } else {
                tape.leaf(&e.shape, e.data.clone())
            };
            tensors.insert(e.name.clone(), t);
        }
        BoundParams { tensors }
    }
}

/// One tape's view of the store. Lives for a single forward/backward pass.
pub struct BoundParams {
    tensors: HashMap<String, Tensor>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }
}
