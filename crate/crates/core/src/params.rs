//! Named parameter groups with trainable flags and gradient buffers.

use std::collections::HashMap;

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
    /// Rows pinned regardless of `trainable` (the `<img>` embedding row).
    pub frozen_rows: Vec<usize>,
    pub grad: Tensor,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        let grad = Tensor::zeros(tensor.shape());
        Self {
            name: name.into(),
            tensor,
            trainable: true,
            frozen_rows: Vec::new(),
            grad,
        }
    }

    /// Scalars this group contributes to the optimiser.
    pub fn trainable_count(&self) -> usize {
        if !self.trainable {
            return 0;
        }
        self.tensor.numel() - self.frozen_rows.len() * self.tensor.cols()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    groups: Vec<ParamGroup>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let id = self.groups.len();
        self.index.insert(name.clone(), id);
        self.groups.push(ParamGroup::new(name, tensor));
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [ParamGroup] {
        &mut self.groups
    }

    pub fn get(&self, id: usize) -> &ParamGroup {
        &self.groups[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut ParamGroup {
        &mut self.groups[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamGroup> {
        self.id(name).map(|i| &self.groups[i])
    }

    pub fn total_count(&self) -> usize {
        self.groups.iter().map(|g| g.tensor.numel()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.groups.iter().map(ParamGroup::trainable_count).sum()
    }

    /// Registers every group as a graph leaf. Frozen groups become constants
    /// unless `all_grads` is set (used by gradient checks).
    pub fn bind(&self, g: &mut Graph, all_grads: bool) -> Vec<Var> {
        self.groups
            .iter()
            .map(|p| g.leaf(p.tensor.clone(), all_grads || p.trainable))
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.groups {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds `scale * grad` for trainable groups; frozen groups are skipped.
    pub fn accumulate(&mut self, vars: &[Var], grads: &Gradients, scale: Real) {
        for (p, &v) in self.groups.iter_mut().zip(vars) {
            if !p.trainable {
                continue;
            }
            if let Some(gt) = grads.get(v) {
                for (a, b) in p.grad.data_mut().iter_mut().zip(gt.data()) {
                    *a += scale * b;
                }
            }
        }
    }

    /// Adds another buffer of per-group gradients (same layout).
    pub fn accumulate_buffers(&mut self, buffers: &[Option<Tensor>], scale: Real) {
        for (p, b) in self.groups.iter_mut().zip(buffers) {
            if let Some(b) = b {
                for (a, v) in p.grad.data_mut().iter_mut().zip(b.data()) {
                    *a += scale * v;
                }
            }
        }
    }

    pub fn grad_norm(&self) -> Real {
        self.groups
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.data())
            .map(|v| v * v)
            .sum::<Real>()
            .sqrt()
    }

    pub fn check_finite(&self) -> Result<()> {
        for p in &self.groups {
            if !p.tensor.is_finite() {
                return Err(Error::NonFinite(format!("parameter {}", p.name)));
            }
        }
        Ok(())
    }
}
