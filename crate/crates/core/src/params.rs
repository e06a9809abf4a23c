//! Named trainable parameters shared between the model and the optimizer.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered parameter storage. Values sit behind `Arc` so tapes can borrow
/// them without copying and evaluation can run on several threads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
    frozen_rows: Vec<Option<usize>>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(Arc::new(value));
        self.frozen_rows.push(None);
        ParamId(self.values.len() - 1)
    }

    /// Marks a row that must stay fixed (the embedding padding row).
    pub fn freeze_row(&mut self, id: ParamId, row: usize) {
        self.frozen_rows[id.0] = Some(row);
    }

    pub fn frozen_row(&self, id: ParamId) -> Option<usize> {
        self.frozen_rows[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.values[id.0])
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::dim(format!(
                "parameter {} has shape {:?}, got {:?}",
                self.names[id.0],
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = Arc::new(value);
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }
}

/// Uniform samples in `[-bound, bound]`.
pub(crate) fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::new(rows, cols, data).expect("valid shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn set_checks_shape() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(2, 2));
        assert!(store.set(id, Tensor::zeros(1, 2)).is_err());
        store.set(id, Tensor::identity(2)).unwrap();
        assert_eq!(store.get(id), &Tensor::identity(2));
        assert_eq!(store.find("w"), Some(id));
    }

    #[test]
    fn uniform_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = uniform(&mut rng, 10, 10, 0.25);
        assert!(t.data().iter().all(|x| x.abs() <= 0.25));
    }
}
