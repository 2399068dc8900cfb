use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adamw,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub weight_decay: Real,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adamw,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW or plain SGD over the trainable groups of a [`ParamStore`].
///
/// Frozen groups and pinned rows are never written. A non-zero gradient found
/// on a frozen group is skipped and counted in `ignored_frozen_grads`.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub t: u64,
    pub first_moment: Vec<Option<Tensor>>,
    pub second_moment: Vec<Option<Tensor>>,
    pub ignored_frozen_grads: usize,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Self {
        let moments = |store: &ParamStore| -> Vec<Option<Tensor>> {
            store
                .groups()
                .iter()
                .map(|p| (p.trainable && config.kind == OptimizerKind::Adamw).then(|| Tensor::zeros(p.tensor.shape())))
                .collect()
        };
        Self {
            first_moment: moments(store),
            second_moment: moments(store),
            config,
            t: 0,
            ignored_frozen_grads: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: Real) -> Result<()> {
        if store.len() != self.first_moment.len() {
            return Err(Error::Config("optimizer state does not match parameter layout".into()));
        }
        self.t += 1;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powi(self.t as i32);
        let bias2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, p) in store.groups_mut().iter_mut().enumerate() {
            if !p.trainable {
                if p.grad.data().iter().any(|&v| v != 0.0) {
                    self.ignored_frozen_grads += 1;
                    log::warn!("gradient on frozen parameter {} ignored", p.name);
                }
                continue;
            }
            let cols = p.tensor.cols();
            let frozen_rows = p.frozen_rows.clone();
            let pinned = |j: usize| frozen_rows.contains(&(j / cols));
            match c.kind {
                OptimizerKind::Sgd => {
                    for j in 0..p.tensor.numel() {
                        if pinned(j) {
                            continue;
                        }
                        let w = p.tensor.data()[j];
                        p.tensor.data_mut()[j] = w - lr * (p.grad.data()[j] + c.weight_decay * w);
                    }
                }
                OptimizerKind::Adamw => {
                    let (Some(m), Some(v)) = (&mut self.first_moment[i], &mut self.second_moment[i]) else {
                        return Err(Error::Config(format!("missing optimizer state for {}", p.name)));
                    };
                    for j in 0..p.tensor.numel() {
                        if pinned(j) {
                            continue;
                        }
                        let gj = p.grad.data()[j];
                        let mj = c.beta1 * m.data()[j] + (1.0 - c.beta1) * gj;
                        let vj = c.beta2 * v.data()[j] + (1.0 - c.beta2) * gj * gj;
                        m.data_mut()[j] = mj;
                        v.data_mut()[j] = vj;
                        let update = (mj / bias1) / ((vj / bias2).sqrt() + c.eps);
                        let w = p.tensor.data()[j];
                        p.tensor.data_mut()[j] = w - lr * (update + c.weight_decay * w);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rescales trainable gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: Real) -> Real {
    let norm = store.grad_norm();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for p in store.groups_mut().iter_mut().filter(|p| p.trainable) {
            for v in p.grad.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::full(&[2, 2], 1.0)).unwrap();
        s.insert("b", Tensor::full(&[3], -1.0)).unwrap();
        s
    }

    #[test]
    fn all_frozen_is_bitwise_stable() {
        let mut s = store();
        for p in s.groups_mut() {
            p.trainable = false;
        }
        let before = s.clone();
        let mut opt = Optimizer::new(OptimizerConfig::default(), &s);
        for _ in 0..50 {
            opt.step(&mut s, 0.1).unwrap();
        }
        assert_eq!(s, before);
        assert_eq!(opt.ignored_frozen_grads, 0);
    }

    #[test]
    fn frozen_gradient_is_ignored_and_counted() {
        let mut s = store();
        s.get_mut(1).trainable = false;
        s.get_mut(1).grad = Tensor::full(&[3], 1.0);
        let before = s.get(1).tensor.clone();
        let mut opt = Optimizer::new(OptimizerConfig::default(), &s);
        opt.step(&mut s, 0.1).unwrap();
        assert_eq!(s.get(1).tensor, before);
        assert_eq!(opt.ignored_frozen_grads, 1);
    }

    #[test]
    fn trainable_gradient_moves_parameters() {
        for kind in [OptimizerKind::Adamw, OptimizerKind::Sgd] {
            let mut s = store();
            s.get_mut(0).grad = Tensor::full(&[2, 2], 0.5);
            let cfg = OptimizerConfig {
                kind,
                weight_decay: 0.0,
                ..OptimizerConfig::default()
            };
            let mut opt = Optimizer::new(cfg, &s);
            opt.step(&mut s, 0.01).unwrap();
            assert!(s.get(0).tensor.data().iter().all(|&v| v < 1.0));
            assert_eq!(s.get(1).tensor.data(), &[-1.0; 3]);
        }
    }

    #[test]
    fn pinned_rows_do_not_move() {
        let mut s = store();
        s.get_mut(0).frozen_rows.push(1);
        s.get_mut(0).grad = Tensor::full(&[2, 2], 1.0);
        let mut opt = Optimizer::new(OptimizerConfig::default(), &s);
        opt.step(&mut s, 0.1).unwrap();
        assert_eq!(s.get(0).tensor.row(1), &[1.0, 1.0]);
        assert!(s.get(0).tensor.row(0).iter().all(|&v| v < 1.0));
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut s = store();
        s.get_mut(0).grad = Tensor::full(&[2, 2], 3.0);
        let before = clip_grad_norm(&mut s, 1.0);
        assert!((before - 6.0).abs() < 1e-12);
        assert!((s.grad_norm() - 1.0).abs() < 1e-12);
    }
}
