//! Beam-sample decoding.
//!
//! Each step draws `samples` continuations spread across the live beams from
//! the (temperature-scaled) next-token distribution, keeps the `beam` best by
//! cumulative log-probability, and retires hypotheses that emit `<eos>`. The
//! result is the finished hypothesis with the best length-normalised score.
//! A temperature of 0 replaces sampling with deterministic top-k expansion,
//! so `beam = 1` is greedy decoding.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::incontext::{special, EncodedBatch, TokenId};
use crate::model::ModictModel;
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub beam: usize,
    pub samples: usize,
    pub max_new_tokens: usize,
    pub temperature: Real,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            beam: 4,
            samples: 20,
            max_new_tokens: 96,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn greedy() -> Self {
        Self {
            beam: 1,
            samples: 1,
            temperature: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 || self.samples < self.beam || self.max_new_tokens == 0 {
            return Err(Error::Config(format!(
                "generation needs beam >= 1, samples >= beam and max_new_tokens >= 1 (got {}, {}, {})",
                self.beam, self.samples, self.max_new_tokens
            )));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config("temperature must be a finite non-negative number".into()));
        }
        Ok(())
    }
}

/// Tokens that may never be generated.
const BANNED: [TokenId; 5] = [special::PAD, special::BOS, special::IMG, special::UNK, special::NL];

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, without the closing `<eos>`.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    /// Tokens scored, including `<eos>` when the hypothesis finished.
    pub length: usize,
    pub ended: bool,
}

impl Hypothesis {
    pub fn score(&self) -> f64 {
        self.log_prob / self.length.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub best: Hypothesis,
    /// Every finished hypothesis that was retained, best included.
    pub finished: Vec<Hypothesis>,
}

fn log_softmax(logits: &[Real], temperature: Real) -> Vec<f64> {
    let t = if temperature > 0.0 { temperature as f64 } else { 1.0 };
    let mut z: Vec<f64> = logits.iter().map(|&x| x as f64 / t).collect();
    for &b in &BANNED {
        if b < z.len() {
            z[b] = f64::NEG_INFINITY;
        }
    }
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

struct Candidate {
    parent: usize,
    token: TokenId,
    log_prob: f64,
}

/// Generates a continuation of `context`. `stream` selects the random stream
/// so that different instances sampled under one seed stay independent.
pub fn generate(model: &ModictModel, context: &EncodedBatch, cfg: &GenConfig, stream: u64) -> Result<Generation> {
    cfg.validate()?;
    let max_len = model.config().max_seq_len;
    let ctx_len = context.generation_stream().len();
    if ctx_len >= max_len {
        return Err(Error::Overlength { len: ctx_len, max: max_len });
    }
    let budget = cfg.max_new_tokens.min(max_len - ctx_len);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);

    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        length: 0,
        ended: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..budget {
        let dists = live
            .par_iter()
            .map(|h| Ok(log_softmax(&model.next_token_logits(&context.extended(&h.tokens))?, cfg.temperature)))
            .collect::<Result<Vec<_>>>()?;

        let mut chosen: BTreeSet<(usize, TokenId)> = BTreeSet::new();
        for (b, dist) in dists.iter().enumerate() {
            let share = cfg.samples / live.len() + usize::from(b < cfg.samples % live.len());
            if cfg.temperature == 0.0 {
                let mut order: Vec<TokenId> = (0..dist.len()).filter(|&t| dist[t].is_finite()).collect();
                order.sort_by(|&a, &c| dist[c].total_cmp(&dist[a]).then(a.cmp(&c)));
                chosen.extend(order.into_iter().take(cfg.beam.max(share)).map(|t| (b, t)));
            } else {
                let weights: Vec<f64> = dist.iter().map(|lp| lp.exp()).collect();
                let sampler = WeightedIndex::new(&weights).map_err(|e| Error::NonFinite(format!("sampling weights: {e}")))?;
                chosen.extend((0..share).map(|_| (b, sampler.sample(&mut rng))));
            }
        }
        let mut candidates: Vec<Candidate> = chosen
            .into_iter()
            .map(|(parent, token)| Candidate {
                parent,
                token,
                log_prob: live[parent].log_prob + dists[parent][token],
            })
            .collect();
        candidates.sort_by(|a, b| {
            b.log_prob
                .total_cmp(&a.log_prob)
                .then(a.parent.cmp(&b.parent))
                .then(a.token.cmp(&b.token))
        });
        candidates.truncate(cfg.beam);

        let mut next = Vec::with_capacity(cfg.beam);
        for c in candidates {
            let parent = &live[c.parent];
            let mut h = Hypothesis {
                tokens: parent.tokens.clone(),
                log_prob: c.log_prob,
                length: parent.length + 1,
                ended: c.token == special::EOS,
            };
            if h.ended {
                finished.push(h);
            } else {
                h.tokens.push(c.token);
                next.push(h);
            }
        }
        live = next;
        if live.is_empty() || finished.len() >= cfg.beam {
            break;
        }
    }
    // Hypotheses cut off by the token budget compete as they are.
    finished.extend(live);
    let best = finished
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.score().total_cmp(&b.score()).then(j.cmp(i)))
        .map(|(_, h)| h.clone())
        .ok_or_else(|| Error::Config("generation produced no hypothesis".into()))?;
    Ok(Generation { best, finished })
}

/// Generates for many contexts in parallel; instance `i` uses random stream `i`.
pub fn generate_all(model: &ModictModel, contexts: &[EncodedBatch], cfg: &GenConfig) -> Result<Vec<Vec<TokenId>>> {
    contexts
        .par_iter()
        .enumerate()
        .map(|(i, c)| generate(model, c, cfg, i as u64).map(|g| g.best.tokens))
        .collect()
}
