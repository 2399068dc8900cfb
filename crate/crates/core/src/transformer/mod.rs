//! Miniature encoder-decoder and decoder-only transformer stacks.
//!
//! Two extensions over a plain pre-LN transformer:
//!
//! * visual-prefix injection: every `<img>` occurrence in the source sequence
//!   is expanded to `visual_prefix_len` slot tokens and prefix vector `i` is
//!   added to the embedding of slot `i`;
//! * per-layer continuous prompts, prepended as extra keys and values in the
//!   self-attention of each layer. Prompts never become output positions, so
//!   every layer keeps the input sequence length.

mod layers;
mod stack;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

pub use layers::{attention_with_prompts, embed_with_visual_prefix, AttentionVars, KeyMask};
pub use stack::{TransformerLayout, TransformerOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    EncoderDecoder,
    DecoderOnly,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::EncoderDecoder => "encoder-decoder",
            Arch::DecoderOnly => "decoder-only",
        })
    }
}

fn default_init_std() -> Real {
    0.02
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Blocks per stack.
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// Vectors per image occurrence.
    pub visual_prefix_len: usize,
    /// Continuous prompts per layer; 0 disables the adapter.
    pub prompt_len: usize,
    /// Width of the frozen image encoder's global vector.
    pub visual_dim: usize,
    #[serde(default = "default_init_std")]
    pub init_std: Real,
    #[serde(default = "default_seed")]
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("visual_prefix_len", self.visual_prefix_len),
            ("visual_dim", self.visual_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Layers that receive continuous prompts: the encoder for
    /// encoder-decoder models, the single stack otherwise.
    pub fn prompted_layers(&self) -> usize {
        self.n_layers
    }
}

/// Positions of visual slots in the source sequence, one entry per image
/// occurrence. Each occurrence lists `(token position, prefix index)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualSlotMap {
    pub occurrences: Vec<Vec<(usize, usize)>>,
}

impl VisualSlotMap {
    pub fn slot_count(&self) -> usize {
        self.occurrences.iter().map(Vec::len).sum()
    }

    pub fn validate(&self, prefix_len: usize) -> Result<()> {
        for (o, occ) in self.occurrences.iter().enumerate() {
            if occ.len() != prefix_len {
                return Err(Error::Slot(format!(
                    "occurrence {o} has {} slots, expected {prefix_len}",
                    occ.len()
                )));
            }
            let mut seen = vec![false; prefix_len];
            for &(_, i) in occ {
                if i >= prefix_len || seen[i] {
                    return Err(Error::Slot(format!("occurrence {o} reuses or overflows prefix index {i}")));
                }
                seen[i] = true;
            }
            let first = occ[0].0;
            if occ.iter().enumerate().any(|(j, &(pos, _))| pos != first + j) {
                return Err(Error::Slot(format!("occurrence {o} slots are not consecutive")));
            }
        }
        Ok(())
    }
}
