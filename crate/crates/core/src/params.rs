//! Named parameter storage shared by every layer of a model.
//!
//! Values sit behind `Arc` so a compute graph can hold them as leaves without
//! copying; the optimizer writes through [`ParamStore::value_mut`] once the
//! graph is gone (copy-on-write otherwise).

use std::collections::HashMap;
use std::sync::Arc;

use crate::scalar::Scalar;
use crate::tensor::{Gradients, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    name: String,
    value: Arc<Tensor<T>>,
    trainable: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Param<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a parameter. Names must be unique within a store.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value: Arc::new(value),
            trainable,
            grad: None,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub(crate) fn shared_value(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.params[id.0].value)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Trainable parameters in registration order.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn num_elements(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.params[id.0].value.len()).sum()
    }

    pub fn grad(&self, id: ParamId) -> Option<&[T]> {
        self.params[id.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds the parameter gradients recorded in `grads` into the grad slots.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.param_grads() {
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(acc) => {
                    for (a, &x) in acc.iter_mut().zip(g) {
                        *a += x;
                    }
                }
                None => p.grad = Some(g.to_vec()),
            }
        }
    }
}
