use super::{Feeds, Gradients, Graph, NodeId, Scalar, Tensor};
use crate::error::{Error, Result};

/// Ordered, named parameter tensors of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    label: String,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    frozen: bool,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(label: &str) -> Self {
        ParamSet {
            label: label.to_string(),
            names: Vec::new(),
            tensors: Vec::new(),
            frozen: false,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn push(&mut self, name: &str, tensor: Tensor<T>) {
        self.names.push(name.to_string());
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Replaces a tensor in place; the shape must not change.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        self.ensure_mutable()?;
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid("parameter", format!("no `{name}` in {}", self.label)))?;
        if self.tensors[i].shape() != tensor.shape() {
            return Err(Error::invalid(
                "parameter",
                format!("`{name}` has shape {:?}, got {:?}", self.tensors[i].shape(), tensor.shape()),
            ));
        }
        self.tensors[i] = tensor;
        Ok(())
    }

    /// Marks the set read-only; optimizers and EMA refuse to touch it.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub(crate) fn ensure_mutable(&self) -> Result<()> {
        if self.frozen {
            Err(Error::Frozen(self.label.clone()))
        } else {
            Ok(())
        }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Same names in the same order with the same shapes.
    pub fn congruent(&self, other: &ParamSet<T>) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            label: self.label.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            frozen: self.frozen,
        }
    }

    pub fn relabel(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Graph leaves holding the parameters of one network instance, in the
/// order of the corresponding [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamNodes {
    entries: Vec<(String, NodeId)>,
}

impl ParamNodes {
    /// Declares one trainable leaf per parameter, named `prefix/name`.
    pub fn declare<T: Scalar>(graph: &mut Graph, prefix: &str, params: &ParamSet<T>) -> Self {
        let entries = params
            .iter()
            .map(|(name, t)| (name.to_string(), graph.param(&format!("{prefix}/{name}"), t.shape())))
            .collect();
        ParamNodes { entries }
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.entries.iter().map(|(_, id)| *id).collect()
    }

    pub fn get(&self, name: &str) -> Option<NodeId> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, id)| *id)
    }

    pub(crate) fn id(&self, name: &str) -> Result<NodeId> {
        self.get(name)
            .ok_or_else(|| Error::invalid("parameter", format!("`{name}` was not declared")))
    }

    /// Feeds every tensor of `params` to its leaf.
    pub fn bind<'a, T: Scalar>(&self, feeds: &mut Feeds<'a, T>, params: &'a ParamSet<T>) -> Result<()> {
        if params.names().len() != self.entries.len()
            || params.names().iter().zip(&self.entries).any(|(a, (b, _))| a != b)
        {
            return Err(Error::invalid("parameters", format!("{} does not match the graph", params.label())));
        }
        for ((_, id), t) in self.entries.iter().zip(params.tensors()) {
            feeds.insert(*id, t);
        }
        Ok(())
    }

    /// Gradients in parameter order; leaves without a gradient get zeros.
    pub fn collect<T: Scalar>(&self, graph: &Graph, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.entries
            .iter()
            .map(|(_, id)| grads.take(*id).unwrap_or_else(|| Tensor::zeros(graph.shape(*id))))
            .collect()
    }
}
