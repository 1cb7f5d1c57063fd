use std::collections::BTreeMap;

use rand::Rng;

use crate::error::TensorError;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
    has_grad: bool,
}

/// Named learnable tensors with gradient accumulators.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::Argument {
                op: "ParamStore::add",
                detail: format!("duplicate parameter name `{name}`"),
            });
        }
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry {
            name,
            value,
            grad,
            has_grad: false,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Uniform init in `[-bound, bound]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId, TensorError> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(shape, data)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn has_grad(&self, id: ParamId) -> bool {
        self.entries[id.0].has_grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
            e.has_grad = false;
        }
    }

    /// Places every parameter on the tape; the returned vector is indexed by
    /// `ParamId`.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| tape.param_leaf(ParamId(i), e.value.clone()))
            .collect()
    }

    /// Adds the gradients of parameter leaves into the accumulators.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients, bound: &[Var]) {
        for &v in bound {
            let Some(id) = tape.param_of(v) else { continue };
            let e = &mut self.entries[id.0];
            // Parameters that took part in the forward pass count as having a
            // gradient even when it happens to be exactly zero.
            e.has_grad = true;
            if let Some(g) = grads.get(v) {
                for (a, b) in e.grad.data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    /// Copies values by name from `other`, which must hold exactly the same
    /// names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), TensorError> {
        if other.len() != self.len() {
            return Err(TensorError::Argument {
                op: "ParamStore::copy_values_from",
                detail: format!("{} parameters, source has {}", self.len(), other.len()),
            });
        }
        for e in &mut self.entries {
            let src = other.find(&e.name).map(|id| other.value(id)).ok_or_else(|| {
                TensorError::Argument {
                    op: "ParamStore::copy_values_from",
                    detail: format!("source lacks `{}`", e.name),
                }
            })?;
            if src.shape() != e.value.shape() {
                return Err(TensorError::dim(
                    "ParamStore::copy_values_from",
                    format!("`{}` is {:?}, source has {:?}", e.name, e.value.shape(), src.shape()),
                ));
            }
            e.value = src.clone();
        }
        Ok(())
    }

    pub(crate) fn entries_mut(
        &mut self,
    ) -> impl Iterator<Item = (&str, &mut Tensor, &Tensor, bool)> {
        self.entries
            .iter_mut()
            .map(|e| (e.name.as_str(), &mut e.value, &e.grad, e.has_grad))
    }
}

