use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors, kept in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "parameter `{name}` registered twice"
        );
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    /// Registers a tensor drawn from `uniform(-bound, bound)`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f32,
        rng: &mut R,
    ) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters whose names start with any of `prefixes`.
    pub fn count_with_prefix(&self, prefixes: &[&str]) -> usize {
        self.iter()
            .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Gradients aligned with a [`ParamStore`]; `None` means the parameter was not used.
#[derive(Clone, Debug, Default)]
pub struct Grads {
    tensors: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn empty(len: usize) -> Self {
        Self {
            tensors: vec![None; len],
        }
    }

    pub(crate) fn accumulate_into(&mut self, id: ParamId, g: &Tensor) {
        match &mut self.tensors[id.0] {
            Some(t) => t.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn raw(&self, id: ParamId) -> Option<&Tensor> {
        self.tensors[id.0].as_ref()
    }

    /// Gradient for `id`, zeros if the parameter did not take part in the loss.
    pub fn get(&self, id: ParamId, store: &ParamStore) -> Tensor {
        self.tensors[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    }

    pub fn by_name(&self, store: &ParamStore) -> BTreeMap<String, Tensor> {
        store
            .ids()
            .map(|id| (store.name(id).to_string(), self.get(id, store)))
            .collect()
    }

    /// Adds `other` in place. Callers fold batches in index order so results are reproducible.
    pub fn add(&mut self, other: &Grads) {
        if self.tensors.len() < other.tensors.len() {
            self.tensors.resize(other.tensors.len(), None);
        }
        for (i, g) in other.tensors.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate_into(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, c: f32) {
        for t in self.tensors.iter_mut().flatten() {
            t.scale_assign(c);
        }
    }

    pub fn global_norm(&self) -> f32 {
        self.tensors
            .iter()
            .flatten()
            .map(Tensor::sum_squares)
            .sum::<f32>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(Tensor::is_finite)
    }
}
