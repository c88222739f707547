use crate::error::{arg_err, Result};
use crate::{Real, Tensor};

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
    trainable: bool,
}

/// Flat, ordered store of named network tensors with gradient buffers.
///
/// Non-trainable entries (batchnorm running statistics) live alongside the
/// weights so checkpoints capture the full network state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> ParamId {
        assert!(
            self.find(name).is_none(),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.insert(name, value, false)
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

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.entries[id.0].trainable)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(T::zero());
        }
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Global L2 norm of all trainable gradients.
    pub fn grad_norm(&self) -> T {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.grad.sq_norm())
            .sum::<T>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: T) -> T {
        let norm = self.grad_norm();
        if norm > max_norm {
            let k = max_norm / norm;
            for e in self.entries.iter_mut().filter(|e| e.trainable) {
                e.grad.scale_inplace(k);
            }
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }

    pub fn grads_finite(&self) -> bool {
        self.entries.iter().all(|e| e.grad.is_finite())
    }

    /// Trainable gradients in store order.
    pub fn grads(&self) -> Vec<Tensor<T>> {
        self.trainable_ids().map(|id| self.grad(id).clone()).collect()
    }

    /// Overwrites every value with the matching entry of `other`, which must
    /// have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.value.data_mut().copy_from_slice(b.value.data());
        }
        Ok(())
    }

    pub fn check_layout(&self, other: &ParamStore<T>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return arg_err(
                "ParamStore",
                format!("{} entries vs {}", self.entries.len(), other.entries.len()),
            );
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return arg_err(
                    "ParamStore",
                    format!(
                        "entry {} {:?} vs {} {:?}",
                        a.name,
                        a.value.shape(),
                        b.name,
                        b.value.shape()
                    ),
                );
            }
        }
        Ok(())
    }

    /// Converts every entry to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for e in &self.entries {
            out.insert(&e.name, e.value.cast(), e.trainable);
        }
        out
    }
}
