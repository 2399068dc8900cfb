#![allow(dead_code)]

pub mod checks;
pub mod golden;
pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use modict::gradcheck::{compare, finite_diff_grad, sample_coords, GradCheckReport};
use modict::incontext::{encode_instance, EncodeConfig, EncodedBatch, InContextInstance, Query, Reference, Vocabulary};
use modict::params::ParamStore;
use modict::transformer::{Arch, ModelConfig};
use modict::{ModictModel, Real, Result};

pub const TOY_VISUAL_DIM: usize = 16;

/// Central-difference step and relative-error floor. Key biases have an
/// exactly zero gradient (softmax is shift invariant), where the estimate is
/// pure roundoff of order 1e-11.
pub const GRAD_EPS: Real = 1e-4;
pub const GRAD_FLOOR: Real = 1e-6;

/// d_model 32, 2 layers, L = 5, M = 4, vocabulary of 200.
pub fn toy_config(arch: Arch, prompt_len: usize) -> ModelConfig {
    ModelConfig {
        arch,
        n_layers: 2,
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        vocab_size: 200,
        max_seq_len: 160,
        visual_prefix_len: 5,
        prompt_len,
        visual_dim: TOY_VISUAL_DIM,
        init_std: 0.02,
        init_seed: 3,
    }
}

pub fn toy_words() -> Vec<String> {
    (0..250).map(|i| format!("w{i}")).collect()
}

/// Template words plus `w0..`, exactly `size` entries.
pub fn toy_vocab(size: usize) -> Vocabulary {
    let base = "Input Image: and Marketing Keywords: , output description is .";
    let mut texts = vec![base.to_string()];
    let words = toy_words();
    let mut v = Vocabulary::build(texts.iter().map(String::as_str));
    let mut i = 0;
    while v.len() < size {
        texts.push(words[i].clone());
        i += 1;
        v = Vocabulary::build(texts.iter().map(String::as_str));
    }
    v
}

fn phrase(rng: &mut impl Rng, n: usize) -> String {
    (0..n).map(|_| format!("w{}", rng.random_range(0..150))).collect::<Vec<_>>().join(" ")
}

pub fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<Real> {
    let n = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<Real> = (0..dim).map(|_| n.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<Real>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

pub fn toy_instance(rng: &mut impl Rng, shots: usize, target_len: usize) -> InContextInstance {
    let references = (0..shots)
        .map(|i| Reference {
            id: format!("r{i}"),
            keywords: vec![phrase(rng, 1), phrase(rng, 2)],
            description: phrase(rng, 6),
            image: unit_vector(rng, TOY_VISUAL_DIM),
        })
        .collect();
    InContextInstance {
        category: "toy".into(),
        references,
        query: Query {
            id: "q".into(),
            keywords: vec![phrase(rng, 1), phrase(rng, 1)],
            image: unit_vector(rng, TOY_VISUAL_DIM),
        },
        target: Some(phrase(rng, target_len)),
    }
}

pub fn encode(cfg: &ModelConfig, vocab: &Vocabulary, inst: &InContextInstance) -> EncodedBatch {
    let ec = EncodeConfig::new(cfg.arch, cfg.visual_prefix_len, cfg.max_seq_len);
    encode_instance(inst, vocab, &ec).unwrap()
}

/// Perturbs every parameter so no group sits at a symmetric initial value
/// (zero biases, zero adapter output layer, unit gains).
pub fn randomize(store: &mut ParamStore, std: Real, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, std).unwrap();
    for p in store.groups_mut() {
        let frozen = p.frozen_rows.clone();
        let cols = p.tensor.cols();
        for (j, v) in p.tensor.data_mut().iter_mut().enumerate() {
            if !frozen.contains(&(j / cols)) {
                *v += n.sample(&mut rng);
            }
        }
    }
}

/// Analytic vs central-difference gradients on up to `per_group` scalars
/// of every parameter group.
pub fn gradient_check(model: &mut ModictModel, batch: &EncodedBatch, per_group: usize, seed: u64) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grads(batch, true)?;
    model.params.zero_grads();
    model.params.accumulate_buffers(&grads, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = sample_coords(&model.params, per_group, &mut rng);
    let m = model.clone();
    let numeric = finite_diff_grad(|theta| m.loss_with(theta, batch), &model.params, GRAD_EPS, &coords)?;
    Ok(compare(&model.params, &coords, &numeric, GRAD_FLOOR))
}
