use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peft::OptimizerConfig;
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_peak: Real,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: Real,
    /// Optional cap on the number of optimiser steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_peak: 1e-4,
            warmup_steps: 1000,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            grad_clip: 1.0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, n_instances: usize) -> usize {
        n_instances.div_ceil(self.batch_size.max(1))
    }

    pub fn total_steps(&self, n_instances: usize) -> usize {
        let full = self.epochs * self.steps_per_epoch(n_instances);
        self.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn validate(&self, n_instances: usize) -> Result<()> {
        if !(self.lr_peak > 0.0) || !self.lr_peak.is_finite() {
            return Err(Error::Config("train.lr_peak must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("train.batch_size and train.epochs must be positive".into()));
        }
        if n_instances == 0 {
            return Err(Error::Config("no training instances".into()));
        }
        let total = self.total_steps(n_instances);
        if self.warmup_steps > total {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds the {total} total steps",
                self.warmup_steps
            )));
        }
        if self.grad_clip < 0.0 {
            return Err(Error::Config("train.grad_clip must be non-negative".into()));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `lr_peak` over `warmup_steps`, then linear decay
/// to 0 at `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig, total_steps: usize) -> Result<Real> {
    if step > total_steps {
        return Err(Error::Config(format!("step {step} is outside 0..={total_steps}")));
    }
    if cfg.warmup_steps > total_steps {
        return Err(Error::Config(format!(
            "warmup_steps {} exceeds total_steps {total_steps}",
            cfg.warmup_steps
        )));
    }
    let peak = cfg.lr_peak;
    if cfg.warmup_steps > 0 && step <= cfg.warmup_steps {
        return Ok(peak * step as Real / cfg.warmup_steps as Real);
    }
    let decay = (total_steps - cfg.warmup_steps) as Real;
    Ok(peak * (total_steps - step) as Real / decay)
}
