use indexmap::IndexMap;

use crate::tensor::{Element, Tape, Tensor, Var};

/// Named parameters in creation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T = f32> {
    map: IndexMap<String, Tensor<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            map: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.map.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Records every parameter on `tape`, differentiable when `trainable`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        let vars = self
            .map
            .iter()
            .map(|(k, v)| {
                let t = v.clone().with_requires_grad(trainable);
                (k.clone(), tape.leaf(t))
            })
            .collect();
        BoundParams { vars }
    }

    /// Order-sensitive bit hash of every value.
    pub fn checksum(&self) -> u64 {
        self.map.values().fold(0xcbf2_9ce4_8422_2325, |h, t| {
            (h ^ t.checksum()).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

/// Tape handles for a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} is not bound"))
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Points `name` at a different tape node.
    pub fn replace(&mut self, name: &str, var: Var) -> Option<Var> {
        self.vars
            .get_mut(name)
            .map(|slot| std::mem::replace(slot, var))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
