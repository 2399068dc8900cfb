use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::transformer::{Arch, ModelConfig};

/// Named trainable/frozen partitions of the model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreezePlan {
    /// Encoder-decoder: first half of the encoder blocks plus the feature
    /// transformer; decoder, embeddings and output head frozen.
    Seq2seqHalfEncoder,
    /// Decoder-only: prompt adapter plus feature transformer; the whole
    /// language model frozen.
    DecoderOnlyAdapter,
    /// Everything except the `<img>` embedding row.
    Full,
    /// Feature transformer only.
    NoAdapter,
    /// Feature transformer only, with zero-shot templates.
    NoAdapterNoMict,
}

impl FreezePlan {
    pub const ALL: [FreezePlan; 5] = [
        FreezePlan::Seq2seqHalfEncoder,
        FreezePlan::DecoderOnlyAdapter,
        FreezePlan::Full,
        FreezePlan::NoAdapter,
        FreezePlan::NoAdapterNoMict,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FreezePlan::Seq2seqHalfEncoder => "seq2seq-half-encoder",
            FreezePlan::DecoderOnlyAdapter => "decoder-only-adapter",
            FreezePlan::Full => "full",
            FreezePlan::NoAdapter => "no-adapter",
            FreezePlan::NoAdapterNoMict => "no-adapter-no-mict",
        }
    }

    /// Plans that drop the in-context references entirely.
    pub fn forces_zero_shot(self) -> bool {
        self == FreezePlan::NoAdapterNoMict
    }

    /// The adapter-free plans expect a model built without prompts.
    pub fn requires_adapter(self) -> Option<bool> {
        match self {
            FreezePlan::DecoderOnlyAdapter => Some(true),
            FreezePlan::NoAdapter | FreezePlan::NoAdapterNoMict => Some(false),
            _ => None,
        }
    }

    fn err(self, reason: impl Into<String>) -> Error {
        Error::Plan {
            plan: self.name().into(),
            reason: reason.into(),
        }
    }

    pub fn validate(self, cfg: &ModelConfig) -> Result<()> {
        match self {
            FreezePlan::Seq2seqHalfEncoder => {
                if cfg.arch != Arch::EncoderDecoder {
                    return Err(self.err("requires an encoder-decoder model"));
                }
                if cfg.n_layers % 2 != 0 {
                    return Err(self.err(format!("odd encoder depth {} cannot be halved", cfg.n_layers)));
                }
            }
            FreezePlan::DecoderOnlyAdapter => {
                if cfg.arch != Arch::DecoderOnly {
                    return Err(self.err("requires a decoder-only model"));
                }
            }
            _ => {}
        }
        match self.requires_adapter() {
            Some(true) if cfg.prompt_len == 0 => Err(self.err("requires prompt_len > 0")),
            Some(false) if cfg.prompt_len > 0 => Err(self.err("requires prompt_len = 0")),
            _ => Ok(()),
        }
    }

    pub fn is_trainable(self, name: &str, cfg: &ModelConfig) -> bool {
        let feature = name.starts_with("feature.");
        match self {
            FreezePlan::Seq2seqHalfEncoder => {
                feature
                    || name
                        .strip_prefix("encoder.block.")
                        .and_then(|rest| rest.split('.').next())
                        .and_then(|i| i.parse::<usize>().ok())
                        .is_some_and(|i| i < cfg.n_layers / 2)
            }
            FreezePlan::DecoderOnlyAdapter => feature || name.starts_with("adapter."),
            FreezePlan::Full => true,
            FreezePlan::NoAdapter | FreezePlan::NoAdapterNoMict => feature,
        }
    }
}

impl fmt::Display for FreezePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FreezePlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FreezePlan::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown freeze plan `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub plan: FreezePlan,
    pub trainable: Vec<String>,
    pub frozen: Vec<String>,
    pub trainable_count: usize,
    pub frozen_count: usize,
    pub total_count: usize,
}

/// Sets every group's trainable flag from the plan.
pub fn apply_freeze_plan(store: &mut ParamStore, cfg: &ModelConfig, plan: FreezePlan) -> Result<PartitionReport> {
    plan.validate(cfg)?;
    let mut trainable = Vec::new();
    let mut frozen = Vec::new();
    for p in store.groups_mut() {
        p.trainable = plan.is_trainable(&p.name, cfg);
        if p.trainable {
            trainable.push(p.name.clone());
        } else {
            frozen.push(p.name.clone());
        }
    }
    let total_count = store.total_count();
    let trainable_count = store.trainable_count();
    Ok(PartitionReport {
        plan,
        trainable,
        frozen,
        trainable_count,
        frozen_count: total_count - trainable_count,
        total_count,
    })
}
