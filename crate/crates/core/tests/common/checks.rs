//! Checks shared by the integration tests and the acceptance runner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use modict::incontext::EncodedBatch;
use modict::params::ParamStore;
use modict::peft::{adapter_forward, DeepPromptAdapter, FreezePlan, OptimizerConfig};
use modict::trainer::{TrainConfig, Trainer};
use modict::transformer::Arch;
use modict::{ModictModel, Real, Tensor};

use super::{encode, randomize, toy_config, toy_instance, toy_vocab};

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|x| (*x as f64).to_bits()).collect()
}

/// Architecture and prompt count a plan is exercised with.
pub fn plan_setup(plan: FreezePlan) -> (Arch, usize, usize) {
    let arch = if plan == FreezePlan::Seq2seqHalfEncoder {
        Arch::EncoderDecoder
    } else {
        Arch::DecoderOnly
    };
    let prompt_len = if plan.requires_adapter() == Some(false) { 0 } else { 4 };
    let shots = if plan.forces_zero_shot() { 0 } else { 1 };
    (arch, prompt_len, shots)
}

pub fn toy_batches(arch: Arch, prompt_len: usize, shots: usize, n: usize, seed: u64) -> (ModictModel, Vec<EncodedBatch>) {
    let cfg = toy_config(arch, prompt_len);
    let vocab = toy_vocab(cfg.vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batches = (0..n).map(|_| encode(&cfg, &vocab, &toy_instance(&mut rng, shots, 4))).collect();
    (ModictModel::new(cfg).unwrap(), batches)
}

pub fn small_train_config(steps: usize) -> TrainConfig {
    TrainConfig {
        lr_peak: 1e-3,
        warmup_steps: (steps / 2).min(10),
        epochs: 10_000,
        batch_size: 2,
        seed: 1,
        optimizer: OptimizerConfig::default(),
        grad_clip: 1.0,
        max_steps: Some(steps),
    }
}

#[derive(Debug, Default)]
pub struct FreezeOutcome {
    pub frozen_changed: Vec<String>,
    pub trainable_unchanged: Vec<String>,
    pub pinned_rows_changed: Vec<String>,
    pub n_frozen: usize,
    pub n_trainable: usize,
}

impl FreezeOutcome {
    pub fn ok(&self) -> bool {
        self.frozen_changed.is_empty() && self.trainable_unchanged.is_empty() && self.pinned_rows_changed.is_empty()
    }
}

/// Trains `steps` updates under `plan` and compares every tensor with its
/// initial bytes.
pub fn freeze_invariants(plan: FreezePlan, steps: usize) -> FreezeOutcome {
    let (arch, prompt_len, shots) = plan_setup(plan);
    let (model, batches) = toy_batches(arch, prompt_len, shots, 8, 21);
    let initial = model.params.clone();
    let mut trainer = Trainer::new(model, plan, small_train_config(steps)).unwrap();
    trainer.run(&batches, |_, _| Ok(())).unwrap();
    assert_eq!(trainer.step, steps);
    let mut out = FreezeOutcome::default();
    for (before, after) in initial.groups().iter().zip(trainer.model.params.groups()) {
        let same = bits(&before.tensor) == bits(&after.tensor);
        if after.trainable {
            out.n_trainable += 1;
            if same {
                out.trainable_unchanged.push(after.name.clone());
            }
        } else {
            out.n_frozen += 1;
            if !same {
                out.frozen_changed.push(after.name.clone());
            }
        }
        for &r in &after.frozen_rows {
            if before.tensor.row(r) != after.tensor.row(r) {
                out.pinned_rows_changed.push(format!("{}[{r}]", after.name));
            }
        }
    }
    out
}

/// Layer count, rows per layer, and the largest deviation of each layer's
/// prompts from rows `l*M..(l+1)*M` of a hand-computed perceptron output.
pub fn adapter_partition(m: usize, n: usize, d: usize, seed: u64) -> (usize, Vec<usize>, Real) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adapter = DeepPromptAdapter::init(&mut store, m, n, d, 0.2, &mut rng).unwrap();
    randomize(&mut store, 0.3, seed + 1);
    let layers = adapter_forward(&adapter, &store, n).unwrap();

    let g = |id: usize| &store.get(id).tensor;
    let (base, w1, b1, wa, ba) = (g(adapter.base), g(adapter.w1), g(adapter.b1), g(adapter.wa), g(adapter.ba));
    let h = base.cols();
    let hidden_w = w1.cols();
    let mut max_dev: Real = 0.0;
    for (l, layer) in layers.iter().enumerate() {
        for i in 0..layer.rows() {
            let x = base.row(l * m + i);
            let hidden: Vec<Real> = (0..hidden_w)
                .map(|j| {
                    let s: Real = (0..h).map(|k| x[k] * w1.at(k, j)).sum::<Real>() + b1.data()[j];
                    s.max(0.0)
                })
                .collect();
            for c in 0..d {
                let y: Real = (0..hidden_w).map(|j| hidden[j] * wa.at(j, c)).sum::<Real>() + ba.data()[c];
                max_dev = max_dev.max((y - layer.at(i, c)).abs());
            }
        }
    }
    (layers.len(), layers.iter().map(|t| t.rows()).collect(), max_dev)
}
