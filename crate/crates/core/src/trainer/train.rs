use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::incontext::EncodedBatch;
use crate::model::ModictModel;
use crate::peft::{apply_freeze_plan, clip_grad_norm, FreezePlan, Optimizer, PartitionReport};
use crate::tensor::Real;

use super::checkpoint::Checkpoint;
use super::schedule::{lr_at, TrainConfig};

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: Real,
    pub lr: Real,
}

/// Owns the model, optimiser state and step counter of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ModictModel,
    pub optimizer: Optimizer,
    pub config: TrainConfig,
    pub plan: FreezePlan,
    pub partition: PartitionReport,
    /// Optimiser steps taken so far.
    pub step: usize,
}

impl Trainer {
    pub fn new(mut model: ModictModel, plan: FreezePlan, config: TrainConfig) -> Result<Self> {
        let cfg = model.config().clone();
        let partition = apply_freeze_plan(&mut model.params, &cfg, plan)?;
        let optimizer = Optimizer::new(config.optimizer.clone(), &model.params);
        Ok(Self {
            model,
            optimizer,
            config,
            plan,
            partition,
            step: 0,
        })
    }

    /// Continues a run from a checkpoint; the freeze plan and optimiser
    /// state come from the checkpoint.
    pub fn from_checkpoint(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        let Checkpoint {
            model_config,
            plan,
            step,
            params,
            optimizer,
        } = ckpt;
        let mut model = ModictModel::from_params(model_config.clone(), params)?;
        let partition = apply_freeze_plan(&mut model.params, &model_config, plan)?;
        Ok(Self {
            model,
            optimizer,
            config,
            plan,
            partition,
            step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model_config: self.model.config().clone(),
            plan: self.plan,
            step: self.step,
            params: self.model.params.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    /// Forward, masked cross-entropy, backward and one plan-respecting
    /// update. Returns the pre-update mean loss.
    pub fn train_step(&mut self, batch: &[EncodedBatch], total_steps: usize) -> Result<Real> {
        let loss = self.model.accumulate_batch(batch, false).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {}", self.step + 1)),
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", self.step + 1)));
        }
        if self.config.grad_clip > 0.0 {
            let norm = clip_grad_norm(&mut self.model.params, self.config.grad_clip);
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!("gradient norm at step {}", self.step + 1)));
            }
        }
        let lr = lr_at(self.step + 1, &self.config, total_steps)?;
        self.optimizer.step(&mut self.model.params, lr)?;
        self.model.params.check_finite()?;
        self.step += 1;
        Ok(loss)
    }

    /// Instance order of `epoch`, a pure function of the seed and epoch.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        order
    }

    /// Trains from the current step to the end of the schedule, calling
    /// `on_step` after every update.
    pub fn run(
        &mut self,
        instances: &[EncodedBatch],
        mut on_step: impl FnMut(&Trainer, LogRecord) -> Result<()>,
    ) -> Result<Vec<LogRecord>> {
        self.config.validate(instances.len())?;
        let per_epoch = self.config.steps_per_epoch(instances.len());
        let total = self.config.total_steps(instances.len());
        let mut log = Vec::new();
        while self.step < total {
            let epoch = self.step / per_epoch;
            let within = self.step % per_epoch;
            let order = self.epoch_order(epoch, instances.len());
            let start = within * self.config.batch_size;
            let end = (start + self.config.batch_size).min(instances.len());
            let batch: Vec<EncodedBatch> = order[start..end].iter().map(|&i| instances[i].clone()).collect();
            let lr = lr_at(self.step + 1, &self.config, total)?;
            let loss = self.train_step(&batch, total)?;
            let rec = LogRecord {
                step: self.step,
                loss,
                lr,
            };
            log.push(rec);
            on_step(self, rec)?;
        }
        Ok(log)
    }
}

pub fn write_log_record(out: &mut impl Write, rec: &LogRecord) -> Result<()> {
    let line = serde_json::to_string(rec).map_err(|e| Error::json("log record", e))?;
    writeln!(out, "{line}").map_err(|e| Error::io("training log", e))
}
