use std::collections::HashMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{config_err, Error, Result};

use super::{Real, Tensor};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named, trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            config_err!("duplicate parameter name {name}");
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Overwrites values from `(name, tensor)` pairs; every store entry must be present.
    pub fn load_from<'a>(
        &mut self,
        entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
    ) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for (name, tensor) in entries {
            let Some(id) = self.id(name) else { continue };
            if self.tensors[id.0].shape() != tensor.shape() {
                return Err(Error::Format(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    self.tensors[id.0].shape(),
                    tensor.shape()
                )));
            }
            self.tensors[id.0] = tensor.clone();
            seen[id.0] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!(
                "parameter {} missing from checkpoint",
                self.names[missing]
            )));
        }
        Ok(())
    }
}

impl ParamStore<f32> {
    /// SHA-256 over names, shapes and little-endian bytes of every tensor.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Uniform `U(-bound, bound)` initialisation.
pub fn uniform_tensor(shape: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(-bound..=bound) as f32)
        .collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// Per-parameter gradient buffers produced by a backward pass.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn new(len: usize) -> Self {
        Gradients {
            slots: vec![None; len],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[T]) {
        match &mut self.slots[id.0] {
            Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, g)| *a += *g),
            slot @ None => *slot = Some(grad.to_vec()),
        }
    }

    /// Adds every gradient in `other` into `self`.
    pub fn merge(&mut self, other: &Gradients<T>) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().flatten().all(|v| v.is_finite())
    }

    pub fn global_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .flatten()
            .map(|v| v.f64() * v.f64())
            .sum::<f64>()
            .sqrt()
    }
}
