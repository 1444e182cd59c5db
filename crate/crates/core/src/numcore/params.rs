//! Named trainable tensors with freeze flags.

use std::collections::HashMap;

use indexmap::IndexMap;

use super::tape::{Grads, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub requires_grad: bool,
}

/// Parameters in declaration order, addressed by dotted path
/// (`layer.0.ffn.w1`, `adapter.lang.1.w_down`, ...).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: IndexMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(
            name.into(),
            Param {
                value,
                grad: None,
                requires_grad: true,
            },
        );
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.params.shift_remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in self.params.values_mut() {
            p.requires_grad = trainable;
        }
    }

    /// Marks exactly the parameters accepted by `pred` as trainable.
    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, p) in self.params.iter_mut() {
            p.requires_grad = pred(name);
        }
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, p)| p.requires_grad)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Little-endian bytes of the named parameters, concatenated in order.
    pub fn bytes_of<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Vec<u8> {
        names
            .into_iter()
            .filter_map(|n| self.params.get(n))
            .flat_map(|p| p.value.to_le_bytes())
            .collect()
    }

    /// Bytes of every parameter whose name satisfies `pred`.
    pub fn bytes_where(&self, pred: impl Fn(&str) -> bool) -> Vec<u8> {
        self.params
            .iter()
            .filter(|(k, _)| pred(k))
            .flat_map(|(_, p)| p.value.to_le_bytes())
            .collect()
    }
}

/// Lazily places parameters on a tape, once each per forward pass.
///
/// Frozen parameters enter as constants so no gradient work is spent on them.
#[derive(Debug, Default)]
pub struct Binder {
    bound: HashMap<String, Var>,
}

impl Binder {
    pub fn new() -> Self {
        Binder::default()
    }

    pub fn var(&mut self, tape: &mut Tape, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let p = params.get(name)?;
        let v = tape.leaf(p.value.clone(), p.requires_grad);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Pre-binds `name` to an existing tape variable (used by gradient checks
    /// that drive parameters as explicit inputs).
    pub fn bind(&mut self, name: impl Into<String>, var: Var) {
        self.bound.insert(name.into(), var);
    }

    /// Adds tape gradients into the `grad` buffers of bound trainable parameters.
    pub fn accumulate(&self, grads: &mut Grads, params: &mut ParamSet) -> Result<()> {
        for (name, var) in &self.bound {
            let p = params.get_mut(name)?;
            if !p.requires_grad {
                continue;
            }
            if let Some(g) = grads.take(*var) {
                match &mut p.grad {
                    Some(existing) => {
                        for (d, s) in existing.values_mut().iter_mut().zip(&g) {
                            *d += s;
                        }
                    }
                    None => p.grad = Some(Tensor::new(p.value.shape().to_vec(), g)?),
                }
            }
        }
        Ok(())
    }
}
