use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Trained by the optimizer and counted in [`ParamCount`].
    Learnable,
    /// State such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub kind: ParamKind,
}

/// Named tensors of a model in construction order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T = f32> {
    entries: Vec<Entry<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.entries.push(Entry { name, tensor, kind });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &Entry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn learnable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.entries[id.0].kind == ParamKind::Learnable)
    }

    /// Two distinct entries borrowed mutably at once.
    pub(crate) fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [T], &mut [T]) {
        assert_ne!(a, b);
        let (lo, hi, swap) = if a.0 < b.0 { (a.0, b.0, false) } else { (b.0, a.0, true) };
        let (head, tail) = self.entries.split_at_mut(hi);
        let (x, y) = (head[lo].tensor.data_mut(), tail[0].tensor.data_mut());
        if swap {
            (y, x)
        } else {
            (x, y)
        }
    }

    /// Insert every learnable tensor into `g`, as differentiable leaves if
    /// `trainable`, otherwise as constants. The result is indexed by
    /// [`ParamId`] and holds `None` for buffers.
    pub fn register(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Option<TensorId>> {
        self.entries
            .iter()
            .map(|e| match e.kind {
                ParamKind::Learnable if trainable => Some(g.param(e.tensor.clone())),
                ParamKind::Learnable => Some(g.constant(e.tensor.clone())),
                ParamKind::Buffer => None,
            })
            .collect()
    }

    /// Learnable scalars grouped by layer (the name up to its last `.`).
    pub fn count(&self) -> ParamCount {
        let mut per_layer: Vec<(String, usize)> = Vec::new();
        for e in self.entries.iter().filter(|e| e.kind == ParamKind::Learnable) {
            let layer = e.name.rsplit_once('.').map_or(e.name.as_str(), |(l, _)| l);
            match per_layer.last_mut() {
                Some((name, n)) if name == layer => *n += e.tensor.numel(),
                _ => per_layer.push((layer.to_string(), e.tensor.numel())),
            }
        }
        let total = per_layer.iter().map(|(_, n)| n).sum();
        ParamCount { per_layer, total }
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                    kind: e.kind,
                })
                .collect(),
        }
    }

    /// Replace tensors by name. Every entry must be present with its shape.
    pub fn load_named(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<()> {
        if named.len() != self.entries.len() {
            return Err(Error::Contract(format!(
                "checkpoint holds {} tensors, model has {}",
                named.len(),
                self.entries.len()
            )));
        }
        for (name, t) in named {
            let id = self
                .find(&name)
                .ok_or_else(|| Error::Contract(format!("unknown tensor {name} in checkpoint")))?;
            let slot = &mut self.entries[id.0].tensor;
            if slot.shape() != t.shape() {
                return Err(Error::mismatch("checkpoint tensor", slot.shape(), t.shape()));
            }
            *slot = t;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub per_layer: Vec<(String, usize)>,
    pub total: usize,
}

impl fmt::Display for ParamCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.per_layer.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
        for (name, n) in &self.per_layer {
            writeln!(f, "{name:<width$}  {n:>8}")?;
        }
        write!(f, "{:<width$}  {:>8}  ({:.3}M)", "total", self.total, self.total as f64 / 1e6)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_groups_by_layer_and_skips_buffers() {
        let mut s = ParamStore::<f32>::new();
        s.add("a.weight", Tensor::zeros(&[8, 3, 3, 3]).unwrap(), ParamKind::Learnable).unwrap();
        s.add("a.bias", Tensor::zeros(&[8]).unwrap(), ParamKind::Learnable).unwrap();
        s.add("bn.gamma", Tensor::zeros(&[8]).unwrap(), ParamKind::Learnable).unwrap();
        s.add("bn.running_mean", Tensor::zeros(&[8]).unwrap(), ParamKind::Buffer).unwrap();
        let c = s.count();
        assert_eq!(c.per_layer, vec![("a".to_string(), 224), ("bn".to_string(), 8)]);
        assert_eq!(c.total, 232);
        assert!(s.add("a.bias", Tensor::zeros(&[1]).unwrap(), ParamKind::Buffer).is_err());
    }

    #[test]
    fn pair_mut_order() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a", Tensor::full(&[1], 1.0).unwrap(), ParamKind::Buffer).unwrap();
        let b = s.add("b", Tensor::full(&[1], 2.0).unwrap(), ParamKind::Buffer).unwrap();
        let (x, y) = s.pair_mut(b, a);
        assert_eq!((x[0], y[0]), (2.0, 1.0));
    }
}
