//! Named, trainable parameters.
//!
//! A `Param` is a named slot holding the current value of one weight. The
//! tensor inside is immutable; an optimizer step installs a fresh tensor.
//! Clones share the slot, so every module referencing the parameter sees
//! updates.

use std::sync::{Arc, RwLock};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct ParamInner<E: Scalar> {
    name: String,
    slot: RwLock<Tensor<E>>,
}

#[derive(Clone)]
pub struct Param<E: Scalar> {
    inner: Arc<ParamInner<E>>,
}

impl<E: Scalar> Param<E> {
    /// Wrap a tensor as a named trainable parameter.
    pub fn new(name: impl Into<String>, tensor: Tensor<E>) -> Self {
        Param {
            inner: Arc::new(ParamInner {
                name: name.into(),
                slot: RwLock::new(tensor.requires_grad()),
            }),
        }
    }

    pub fn name(&self) -> String {
        self.inner.name.clone()
    }

    /// Current value, as a graph leaf with gradient tracking.
    pub fn value(&self) -> Tensor<E> {
        self.inner.slot.read().unwrap().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.slot.read().unwrap().shape().to_vec()
    }

    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.slot.read().unwrap().grad()
    }

    pub fn clear_grad(&self) {
        self.inner.slot.read().unwrap().clear_grad();
    }

    /// Install new values (e.g. an optimizer step or checkpoint load). The
    /// replacement starts with an empty gradient accumulator.
    pub fn set_data(&self, data: Vec<E>) {
        let mut slot = self.inner.slot.write().unwrap();
        let shape = slot.shape().to_vec();
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "set_data length mismatch for {}",
            self.inner.name
        );
        *slot = Tensor::from_vec(&shape, data).unwrap().requires_grad();
    }
}

impl<E: Scalar> std::fmt::Debug for Param<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Param")
            .field("name", &self.inner.name)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Assert all names in a parameter list are unique; returns the list.
pub fn check_unique_names<E: Scalar>(params: Vec<Param<E>>) -> Vec<Param<E>> {
    let mut seen = std::collections::HashSet::new();
    for p in &params {
        assert!(seen.insert(p.name()), "duplicate parameter name: {}", p.name());
    }
    params
}
