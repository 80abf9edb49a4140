use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};

/// Named parameter arrays. Iteration order is the name order, which keeps
/// initialization, gradient reduction and serialization deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    arrays: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        self.arrays.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Array2<f64>> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::invalid("param", format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array2<f64>> {
        self.arrays
            .get_mut(name)
            .ok_or_else(|| Error::invalid("param", format!("unknown parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.arrays.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn n_scalars(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }

    /// Glorot-uniform init seeded per parameter name, so a layer's initial
    /// weights do not depend on which other layers exist in the model.
    pub fn init_glorot(&mut self, name: &str, rows: usize, cols: usize, model_seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(model_seed, name));
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let arr = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit));
        self.insert(name, arr);
    }

    pub fn init_const(&mut self, name: &str, rows: usize, cols: usize, value: f64) {
        self.insert(name, Array2::from_elem((rows, cols), value));
    }

    pub fn init_uniform(&mut self, name: &str, rows: usize, cols: usize, lo: f64, hi: f64, model_seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(model_seed, name));
        let arr = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(lo..hi));
        self.insert(name, arr);
    }
}

pub fn name_seed(model_seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, folded with the model seed.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ model_seed.rotate_left(23)
}

/// One forward pass: a tape plus the parameter leaves registered on it.
pub struct Graph<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    param_ids: BTreeMap<String, TensorId>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            param_ids: BTreeMap::new(),
        }
    }

    /// Leaf for a named parameter, registered once per pass.
    pub fn param(&mut self, name: &str) -> Result<TensorId> {
        if let Some(id) = self.param_ids.get(name) {
            return Ok(*id);
        }
        let id = self.tape.leaf(self.store.get(name)?.clone())?;
        self.param_ids.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn param_value(&self, name: &str) -> Result<&Array2<f64>> {
        self.store.get(name)
    }

    /// Gradients of every registered parameter after a backward pass;
    /// parameters the loss never reached get zeros.
    pub fn param_grads(&self) -> BTreeMap<String, Array2<f64>> {
        self.param_ids
            .iter()
            .map(|(name, id)| (name.clone(), self.tape.grad_or_zeros(*id)))
            .collect()
    }

    pub fn registered_params(&self) -> impl Iterator<Item = (&str, TensorId)> {
        self.param_ids.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
