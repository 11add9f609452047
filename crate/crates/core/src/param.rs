//! Named, trainable parameters.
//!
//! Every learnable tensor lives in a [`ParamStore`] under a dotted name path
//! such as `phase0.block1.bda.qkv.weight`. Layers keep [`ParamId`] handles and
//! read the current tensor on every forward pass, so an optimizer step or a
//! copy between models only has to swap tensors inside the store.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        let tensor = Tensor::param(shape, data)?;
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            tensor,
            trainable: true,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Uniform in `±bound`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, shape, data)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn add_full(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        self.add(name, shape, vec![value; n])
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Replaces the values of a parameter with a fresh leaf (no gradient).
    pub fn set(&mut self, id: ParamId, data: Vec<f64>) -> Result<()> {
        let p = &mut self.params[id.0];
        p.tensor = Tensor::param(p.tensor.shape(), data)?;
        Ok(())
    }

    pub fn set_by_name(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))?;
        self.set(id, data)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    /// Same names, tensors taken from `tensors` in store order. Used to
    /// evaluate the model at perturbed or constant parameter values.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<ParamStore> {
        if tensors.len() != self.params.len() {
            return Err(Error::contract("tensor count differs from parameter count"));
        }
        let mut out = self.clone();
        for (p, t) in out.params.iter_mut().zip(tensors) {
            if t.shape() != p.tensor.shape() {
                return Err(Error::dim(format!("shape change for {}", p.name)));
            }
            p.tensor = t;
        }
        Ok(out)
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.tensor.clone()).collect()
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }
}
