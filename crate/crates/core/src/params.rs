use std::collections::HashMap;

use crate::autodiff::{Graph, Real, Tensor, Var};

/// Named parameter tensors in a fixed insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: PartialEq> PartialEq for ParamStore<T> {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Panics on duplicate names; parameter layouts are fixed by the code.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn filter_prefix(&self, prefix: &str) -> Self {
        let mut out = Self::new();
        for (n, t) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            out.insert(n, t.clone());
        }
        out
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (n, t) in self.iter() {
            out.insert(n, t.cast());
        }
        out
    }

    /// Inserts every parameter whose name starts with `prefix` as a leaf.
    pub fn bind(&self, g: &mut Graph<T>, prefix: &str, trainable: bool) -> Bound {
        let mut vars = HashMap::new();
        for (n, t) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            let v = if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            };
            vars.insert(n.to_string(), v);
        }
        Bound { vars }
    }
}

/// Parameter name → graph node for one forward pass.
#[derive(Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, &v)| (n.as_str(), v))
    }

    /// Copies gradients of every bound parameter out of the graph, in the
    /// store's order. Parameters the loss did not reach get zeros.
    pub fn gradients<T: Real>(&self, g: &Graph<T>, store: &ParamStore<T>) -> Vec<Vec<T>> {
        store
            .iter()
            .map(|(name, t)| match self.vars.get(name).and_then(|&v| g.grad(v)) {
                Some(gr) => gr.to_vec(),
                None => vec![T::zero(); t.numel()],
            })
            .collect()
    }
}
