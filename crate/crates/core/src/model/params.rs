//! Named parameter storage and initialization.

use std::ops::Index;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Gradients, Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named learnable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count across all tensors.
    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Replaces every tensor from `named`, which must cover exactly the
    /// same names with identical shapes.
    pub fn load_named(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::Data(format!(
                "parameter set has {} tensors, model expects {}",
                named.len(),
                self.len()
            )));
        }
        for (name, tensor) in named {
            let i = self
                .names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::Data(format!("unexpected parameter `{name}`")))?;
            if self.tensors[i].shape() != tensor.shape() {
                return Err(Error::shape("load_params", self.tensors[i].shape(), tensor.shape()));
            }
            self.tensors[i] = tensor;
        }
        Ok(())
    }

    /// Records every parameter as a gradient-receiving leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.param(t.clone())).collect(),
        }
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.constant(t.clone())).collect(),
        }
    }
}

/// Graph handles for a bound [`ParamStore`], indexable by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl Bound {
    /// Wraps handles created by the caller, in parameter order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// One gradient per parameter; zeros for parameters the loss does not
    /// reach.
    pub fn gradients<T: Real>(&self, grads: &mut Gradients<T>, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .zip(store.tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}

/// Uniform Glorot initialization, `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<T: Real>(rng: &mut SplitMix64, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-bound..bound)))
}
