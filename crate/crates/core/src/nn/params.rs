use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Scalar, Tensor};

/// Named parameters in deterministic (sorted) order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
    pub seed: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self { tensors: BTreeMap::new(), seed }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.tensors.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(), seed: self.seed }
    }

    /// Copies every tensor whose name starts with `prefix` from `other`.
    pub fn copy_prefixed(&mut self, other: &ParamStore<T>, prefix: &str) {
        for (k, v) in &other.tensors {
            if k.starts_with(prefix) {
                self.tensors.insert(k.clone(), v.clone());
            }
        }
    }

    /// Linear layer `{prefix}.w` (`fan_in × fan_out`, uniform with variance
    /// `1/fan_in`) and zero bias `{prefix}.b`.
    pub fn init_linear<R: Rng>(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
        let bound = (3.0 / fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| T::c(rng.gen_range(-bound..bound))).collect();
        self.insert(format!("{prefix}.w"), Tensor::matrix(fan_in, fan_out, w));
        self.insert(format!("{prefix}.b"), Tensor::zeros(&[1, fan_out]));
    }

    /// Zero-initialized linear layer.
    pub fn init_linear_zero(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.insert(format!("{prefix}.w"), Tensor::zeros(&[fan_in, fan_out]));
        self.insert(format!("{prefix}.b"), Tensor::zeros(&[1, fan_out]));
    }

    /// Embedding table with entries drawn from `N(0, 1/√scale_dim)`.
    pub fn init_embedding<R: Rng>(&mut self, name: &str, rows: usize, dim: usize, scale_dim: usize, rng: &mut R) {
        let normal = Normal::new(0.0, 1.0 / (scale_dim as f64).sqrt()).expect("positive deviation");
        let data = (0..rows * dim).map(|_| T::c(normal.sample(rng))).collect();
        self.insert(name, Tensor::matrix(rows, dim, data));
    }

    /// Layer-norm affine parameters `{prefix}.gamma = 1`, `{prefix}.beta = 0`.
    pub fn init_layer_norm(&mut self, prefix: &str, dim: usize) {
        self.insert(format!("{prefix}.gamma"), Tensor::full(&[1, dim], T::one()));
        self.insert(format!("{prefix}.beta"), Tensor::zeros(&[1, dim]));
    }
}

/// Seeded RNG used for every initialization and shuffle in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
