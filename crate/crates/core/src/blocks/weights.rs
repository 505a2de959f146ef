use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// How a parameter is initialised by [`BlockWeights::seeded`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamEntry {
    pub path: String,
    pub shape: Shape,
    pub init: Init,
}

impl ParamEntry {
    pub fn numel(&self) -> usize {
        self.shape.numel()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Named parameter tensors. Vectors (biases, BN scale/shift) are stored as
/// `(len, 1, 1, 1)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BlockWeights {
    tensors: BTreeMap<String, Tensor>,
}

impl BlockWeights {
    pub fn new() -> Self {
        Self::default()
    }

    /// Deterministic initialisation of `entries` in declaration order.
    pub fn seeded(entries: &[ParamEntry], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = BlockWeights::new();
        for e in entries {
            let t = match e.init {
                Init::Ones => Tensor::full(e.shape, 1.0),
                Init::Zeros => Tensor::zeros(e.shape),
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
                    Tensor::from_fn(e.shape, |_| rng.random_range(-bound..=bound))
                }
            };
            weights.insert(e.path.clone(), t);
        }
        weights
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(path.into(), tensor);
    }

    pub fn remove(&mut self, path: &str) -> Option<Tensor> {
        self.tensors.remove(path)
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.tensors.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(path)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn total_floats(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn root(&self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn scope(&self, prefix: &str) -> Scope<'_> {
        Scope {
            store: self,
            prefix: prefix.to_string(),
        }
    }

    /// Every entry present with its declared shape.
    pub fn check_layout(&self, entries: &[ParamEntry]) -> Result<()> {
        for e in entries {
            self.root().tensor(&e.path, e.shape)?;
        }
        Ok(())
    }
}

/// A read-only view of [`BlockWeights`] under a path prefix.
#[derive(Clone, Debug)]
pub struct Scope<'a> {
    store: &'a BlockWeights,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn sub(&self, name: &str) -> Scope<'a> {
        Scope {
            store: self.store,
            prefix: join(&self.prefix, name),
        }
    }

    pub fn path(&self, name: &str) -> String {
        join(&self.prefix, name)
    }

    pub fn tensor(&self, name: &str, expected: Shape) -> Result<&'a Tensor> {
        let path = self.path(name);
        let t = self
            .store
            .get(&path)
            .ok_or_else(|| Error::MissingWeight { path: path.clone() })?;
        if t.shape() != expected {
            return Err(Error::WeightShape {
                path,
                expected,
                actual: t.shape(),
            });
        }
        Ok(t)
    }

    pub fn vector(&self, name: &str, len: usize) -> Result<&'a [f32]> {
        Ok(self.tensor(name, Shape::new(len, 1, 1, 1))?.data())
    }
}
