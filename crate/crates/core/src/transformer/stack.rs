use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::incontext::{special, EncodedBatch};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

use super::layers::{attention_with_prompts, cross_attention, embed_with_visual_prefix, AttentionVars, KeyMask};
use super::{Arch, ModelConfig};

#[derive(Debug, Clone, Copy)]
struct NormIds {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, Copy)]
struct AttnIds {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
struct FfnIds {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct BlockIds {
    ln1: NormIds,
    attn: AttnIds,
    cross: Option<(NormIds, AttnIds)>,
    ln2: NormIds,
    ffn: FfnIds,
}

#[derive(Debug, Clone)]
struct StackIds {
    pos: usize,
    blocks: Vec<BlockIds>,
    ln_f: NormIds,
}

/// Parameter ids of the language-model part, registered in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct TransformerLayout {
    tok_embed: usize,
    encoder: Option<StackIds>,
    decoder: StackIds,
    head_w: usize,
    head_b: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TransformerOutput {
    /// One row per position of the logit-producing stream.
    pub logits: Var,
    pub encoder_out: Option<Var>,
}

struct Init<'a, R: Rng> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
    normal: Normal<Real>,
}

impl<R: Rng> Init<'_, R> {
    fn normal(&mut self, name: String, shape: &[usize]) -> Result<usize> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.normal.sample(self.rng)).collect();
        self.store.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> Result<usize> {
        self.store.insert(name, Tensor::zeros(shape))
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Result<NormIds> {
        Ok(NormIds {
            gamma: self.store.insert(format!("{prefix}.gamma"), Tensor::full(&[d], 1.0))?,
            beta: self.zeros(format!("{prefix}.beta"), &[d])?,
        })
    }

    fn attn(&mut self, prefix: &str, d: usize) -> Result<AttnIds> {
        Ok(AttnIds {
            wq: self.normal(format!("{prefix}.wq"), &[d, d])?,
            bq: self.zeros(format!("{prefix}.bq"), &[d])?,
            wk: self.normal(format!("{prefix}.wk"), &[d, d])?,
            bk: self.zeros(format!("{prefix}.bk"), &[d])?,
            wv: self.normal(format!("{prefix}.wv"), &[d, d])?,
            bv: self.zeros(format!("{prefix}.bv"), &[d])?,
            wo: self.normal(format!("{prefix}.wo"), &[d, d])?,
            bo: self.zeros(format!("{prefix}.bo"), &[d])?,
        })
    }

    fn stack(&mut self, name: &str, cfg: &ModelConfig, with_cross: bool) -> Result<StackIds> {
        let d = cfg.d_model;
        let pos = self.normal(format!("{name}.pos"), &[cfg.max_seq_len, d])?;
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = format!("{name}.block.{i}");
            let ln1 = self.norm(&format!("{p}.ln1"), d)?;
            let attn = self.attn(&format!("{p}.attn"), d)?;
            let cross = if with_cross {
                Some((self.norm(&format!("{p}.ln_cross"), d)?, self.attn(&format!("{p}.cross_attn"), d)?))
            } else {
                None
            };
            let ln2 = self.norm(&format!("{p}.ln2"), d)?;
            let ffn = FfnIds {
                w1: self.normal(format!("{p}.ffn.w1"), &[d, cfg.d_ff])?,
                b1: self.zeros(format!("{p}.ffn.b1"), &[cfg.d_ff])?,
                w2: self.normal(format!("{p}.ffn.w2"), &[cfg.d_ff, d])?,
                b2: self.zeros(format!("{p}.ffn.b2"), &[d])?,
            };
            blocks.push(BlockIds {
                ln1,
                attn,
                cross,
                ln2,
                ffn,
            });
        }
        let ln_f = self.norm(&format!("{name}.ln_f"), d)?;
        Ok(StackIds { pos, blocks, ln_f })
    }
}

impl AttnIds {
    fn vars(&self, v: &[Var]) -> AttentionVars {
        AttentionVars {
            wq: v[self.wq],
            bq: v[self.bq],
            wk: v[self.wk],
            bk: v[self.bk],
            wv: v[self.wv],
            bv: v[self.bv],
            wo: v[self.wo],
            bo: v[self.bo],
        }
    }
}

fn norm(g: &mut Graph, v: &[Var], ids: NormIds, x: Var) -> Result<Var> {
    g.layer_norm(x, v[ids.gamma], v[ids.beta])
}

impl TransformerLayout {
    /// Registers every language-model parameter (scaled-normal weights,
    /// zero biases, unit layer-norm gains).
    pub fn init(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let normal = Normal::new(0.0, cfg.init_std).map_err(|e| Error::Config(e.to_string()))?;
        let mut init = Init { store, rng, normal };
        let tok_embed = init.normal("embed.tokens".into(), &[cfg.vocab_size, cfg.d_model])?;
        let (encoder, decoder) = match cfg.arch {
            Arch::EncoderDecoder => (Some(init.stack("encoder", cfg, false)?), init.stack("decoder", cfg, true)?),
            Arch::DecoderOnly => (None, init.stack("decoder", cfg, false)?),
        };
        let head_w = init.normal("lm_head.w".into(), &[cfg.d_model, cfg.vocab_size])?;
        let head_b = init.zeros("lm_head.b".into(), &[cfg.vocab_size])?;
        // The <img> embedding row is a fixed placeholder under every plan.
        if special::IMG < cfg.vocab_size {
            init.store.get_mut(tok_embed).frozen_rows.push(special::IMG);
        }
        Ok(Self {
            tok_embed,
            encoder,
            decoder,
            head_w,
            head_b,
        })
    }

    /// Rebuilds the id layout for a store created by [`TransformerLayout::init`].
    pub fn locate(cfg: &ModelConfig, store: &ParamStore) -> Result<Self> {
        let id = |name: String| {
            store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
        };
        let norm_ids = |p: String| -> Result<NormIds> {
            Ok(NormIds {
                gamma: id(format!("{p}.gamma"))?,
                beta: id(format!("{p}.beta"))?,
            })
        };
        let attn_ids = |p: String| -> Result<AttnIds> {
            Ok(AttnIds {
                wq: id(format!("{p}.wq"))?,
                bq: id(format!("{p}.bq"))?,
                wk: id(format!("{p}.wk"))?,
                bk: id(format!("{p}.bk"))?,
                wv: id(format!("{p}.wv"))?,
                bv: id(format!("{p}.bv"))?,
                wo: id(format!("{p}.wo"))?,
                bo: id(format!("{p}.bo"))?,
            })
        };
        let stack = |name: &str, with_cross: bool| -> Result<StackIds> {
            let mut blocks = Vec::new();
            for i in 0..cfg.n_layers {
                let p = format!("{name}.block.{i}");
                blocks.push(BlockIds {
                    ln1: norm_ids(format!("{p}.ln1"))?,
                    attn: attn_ids(format!("{p}.attn"))?,
                    cross: if with_cross {
                        Some((norm_ids(format!("{p}.ln_cross"))?, attn_ids(format!("{p}.cross_attn"))?))
                    } else {
                        None
                    },
                    ln2: norm_ids(format!("{p}.ln2"))?,
                    ffn: FfnIds {
                        w1: id(format!("{p}.ffn.w1"))?,
                        b1: id(format!("{p}.ffn.b1"))?,
                        w2: id(format!("{p}.ffn.w2"))?,
                        b2: id(format!("{p}.ffn.b2"))?,
                    },
                });
            }
            Ok(StackIds {
                pos: id(format!("{name}.pos"))?,
                blocks,
                ln_f: norm_ids(format!("{name}.ln_f"))?,
            })
        };
        let (encoder, decoder) = match cfg.arch {
            Arch::EncoderDecoder => (Some(stack("encoder", false)?), stack("decoder", true)?),
            Arch::DecoderOnly => (None, stack("decoder", false)?),
        };
        Ok(Self {
            tok_embed: id("embed.tokens".into())?,
            encoder,
            decoder,
            head_w: id("lm_head.w".into())?,
            head_b: id("lm_head.b".into())?,
        })
    }

    pub fn token_embedding_id(&self) -> usize {
        self.tok_embed
    }

    #[allow(clippy::too_many_arguments)]
    fn run_stack(
        &self,
        g: &mut Graph,
        v: &[Var],
        cfg: &ModelConfig,
        stack: &StackIds,
        mut x: Var,
        padding: &[bool],
        causal: bool,
        prompts: Option<&[Var]>,
        memory: Option<(Var, &[bool])>,
    ) -> Result<Var> {
        let t = g.value(x).rows();
        let positions: Vec<usize> = (0..t).collect();
        let pos = g.embedding(v[stack.pos], &positions)?;
        x = g.add(x, pos)?;
        let mask = KeyMask {
            causal,
            padding: Some(padding),
        };
        for (l, block) in stack.blocks.iter().enumerate() {
            let h = norm(g, v, block.ln1, x)?;
            let layer_prompts = prompts.map(|p| p[l]);
            let a = attention_with_prompts(g, &block.attn.vars(v), h, layer_prompts, mask, cfg.n_heads)?;
            x = g.add(x, a)?;
            if let (Some((ln, cross)), Some((mem, mem_pad))) = (&block.cross, memory) {
                let h = norm(g, v, *ln, x)?;
                let c = cross_attention(g, &cross.vars(v), h, mem, Some(mem_pad), cfg.n_heads)?;
                x = g.add(x, c)?;
            }
            let h = norm(g, v, block.ln2, x)?;
            let f = g.linear(h, v[block.ffn.w1], v[block.ffn.b1])?;
            let f = g.gelu(f);
            let f = g.linear(f, v[block.ffn.w2], v[block.ffn.b2])?;
            x = g.add(x, f)?;
        }
        norm(g, v, stack.ln_f, x)
    }

    /// Runs the language model. `vars` are the graph leaves of the store,
    /// `prefixes[o]` the `L x d_model` prefix of image occurrence `o`, and
    /// `prompts[l]` the `M x d_model` prompts of prompted layer `l`. With
    /// `last_only` only the final position is projected to logits.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        cfg: &ModelConfig,
        batch: &EncodedBatch,
        prefixes: &[Var],
        prompts: Option<&[Var]>,
        last_only: bool,
    ) -> Result<TransformerOutput> {
        for len in [batch.source_ids.len(), batch.decoder_ids.len()] {
            if len > cfg.max_seq_len {
                return Err(Error::Overlength {
                    len,
                    max: cfg.max_seq_len,
                });
            }
        }
        if let Some(p) = prompts {
            if p.len() != cfg.n_layers {
                return Err(Error::Config(format!("{} prompt tensors for {} layers", p.len(), cfg.n_layers)));
            }
            for &pv in p {
                if g.value(pv).rows() != cfg.prompt_len {
                    return Err(Error::Config(format!(
                        "layer prompt has {} vectors, expected {}",
                        g.value(pv).rows(),
                        cfg.prompt_len
                    )));
                }
            }
        }
        let table = vars[self.tok_embed];
        let src = embed_with_visual_prefix(g, table, &batch.source_ids, &batch.slot_map, prefixes, special::IMG)?;
        let (hidden, encoder_out) = match (&self.encoder, cfg.arch) {
            (Some(enc), Arch::EncoderDecoder) => {
                let memory = self.run_stack(g, vars, cfg, enc, src, &batch.source_padding, false, prompts, None)?;
                let dec_in = g.embedding(table, &batch.decoder_ids)?;
                let dec_pad = vec![true; batch.decoder_ids.len()];
                let h = self.run_stack(
                    g,
                    vars,
                    cfg,
                    &self.decoder,
                    dec_in,
                    &dec_pad,
                    true,
                    None,
                    Some((memory, &batch.source_padding)),
                )?;
                (h, Some(memory))
            }
            _ => {
                let h = self.run_stack(g, vars, cfg, &self.decoder, src, &batch.source_padding, true, prompts, None)?;
                (h, None)
            }
        };
        let hidden = if last_only {
            let t = g.value(hidden).rows();
            g.slice_rows(hidden, t - 1, 1)?
        } else {
            hidden
        };
        let logits = g.linear(hidden, vars[self.head_w], vars[self.head_b])?;
        Ok(TransformerOutput { logits, encoder_out })
    }
}
