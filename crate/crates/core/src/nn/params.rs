use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{BnUpdate, Gradients, Graph, BN_MOMENTUM};
use super::{Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Conv and linear weights: weight decay and trust scaling apply.
    Weight,
    /// Biases and batch-norm affine terms.
    NormOrBias,
    /// Running statistics, never differentiated.
    Buffer,
}

/// Ordered, named collection of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T: Real = f32> {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    tensors: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            kinds: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let i = self.tensors.len();
        self.index.insert(name.clone(), i);
        self.names.push(name);
        self.kinds.push(kind);
        self.tensors.push(value);
        i
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn kind(&self, i: usize) -> ParamKind {
        self.kinds[i]
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ParamKind, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.kinds)
            .zip(&self.tensors)
            .map(|((n, k), t)| (n.as_str(), *k, t))
    }

    /// Number of trainable scalars (buffers excluded).
    pub fn n_trainable(&self) -> usize {
        self.iter()
            .filter(|(_, k, _)| *k != ParamKind::Buffer)
            .map(|(_, _, t)| t.numel())
            .sum()
    }

    /// The first `n` entries as a new set; used for the EMA target.
    pub fn prefix(&self, n: usize) -> Self {
        let mut out = Self::new();
        for i in 0..n.min(self.len()) {
            out.add(self.names[i].clone(), self.kinds[i], self.tensors[i].clone());
        }
        out
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for (n, k, t) in self.iter() {
            out.add(n, k, t.cast());
        }
        out
    }

    /// Puts every tensor on the tape. Buffers are not bound; frozen sets bind as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .iter()
            .map(|(_, k, t)| match (k, trainable) {
                (ParamKind::Buffer, _) => None,
                (_, true) => Some(g.param(t.clone())),
                (_, false) => Some(g.constant(t.clone())),
            })
            .collect();
        Bound { vars }
    }

    /// Folds batch statistics into the running buffers.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            for (idx, batch) in [(u.mean_index, &u.batch_mean), (u.var_index, &u.batch_var)] {
                for (r, &b) in self.tensors[idx].data_mut().iter_mut().zip(batch) {
                    *r = T::from_f64((1.0 - BN_MOMENTUM) * r.to_f64() + BN_MOMENTUM * b);
                }
            }
        }
    }

    /// Same names and shapes, in the same order.
    pub fn check_compatible<U: Real>(&self, other: &ParamSet<U>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::shape(
                "ParamSet",
                format!("{} tensors vs {}", self.len(), other.len()),
            ));
        }
        for i in 0..self.len() {
            if self.names[i] != other.names[i] || self.tensors[i].shape() != other.tensors[i].shape() {
                return Err(Error::shape(
                    "ParamSet",
                    format!(
                        "{} {:?} vs {} {:?}",
                        self.names[i],
                        self.tensors[i].shape(),
                        other.names[i],
                        other.tensors[i].shape()
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Tape handles for a bound [`ParamSet`], by parameter index.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, i: usize) -> Var {
        self.vars[i].expect("buffers are not bound")
    }

    /// Gradient per parameter index; `None` for buffers and disconnected parameters.
    pub fn grads<T: Real>(&self, grads: &Gradients<T>) -> Vec<Option<Vec<T>>> {
        self.vars
            .iter()
            .map(|v| v.and_then(|v| grads.get(v).map(<[T]>::to_vec)))
            .collect()
    }
}
