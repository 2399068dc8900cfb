//! Parameter-efficient tuning: the deep-prompt adapter, freeze plans and a
//! plan-respecting optimiser.

mod adapter;
mod freeze;
mod optim;

pub use adapter::{adapter_forward, DeepPromptAdapter};
pub use freeze::{apply_freeze_plan, FreezePlan, PartitionReport};
pub use optim::{clip_grad_norm, Optimizer, OptimizerConfig, OptimizerKind};
