//! The full model: language model, feature transformer and (optionally) the
//! deep-prompt adapter, sharing one [`ParamStore`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::incontext::{EncodedBatch, FeatureTransformer};
use crate::params::ParamStore;
use crate::peft::DeepPromptAdapter;
use crate::tensor::{Real, Tensor};
use crate::transformer::{ModelConfig, TransformerLayout};

#[derive(Debug, Clone)]
pub struct ModictModel {
    config: ModelConfig,
    pub params: ParamStore,
    lm: TransformerLayout,
    feature: FeatureTransformer,
    adapter: Option<DeepPromptAdapter>,
}

/// Graph nodes produced by one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Var,
    pub prefixes: Vec<Var>,
    pub prompts: Option<Vec<Var>>,
}

/// Loss plus per-group gradients (`None` where no gradient was computed).
pub type LossAndGrads = (Real, Vec<Option<Tensor>>);

impl ModictModel {
    /// Fresh model initialised from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let lm = TransformerLayout::init(&config, &mut params, &mut rng)?;
        let feature = FeatureTransformer::init(
            &mut params,
            config.visual_dim,
            config.visual_prefix_len,
            config.d_model,
            config.init_std,
            &mut rng,
        )?;
        let adapter = if config.prompt_len > 0 {
            Some(DeepPromptAdapter::init(
                &mut params,
                config.prompt_len,
                config.n_layers,
                config.d_model,
                config.init_std,
                &mut rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            config,
            params,
            lm,
            feature,
            adapter,
        })
    }

    /// Wraps an existing store (e.g. from a checkpoint).
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let lm = TransformerLayout::locate(&config, &params)?;
        let feature = FeatureTransformer::locate(&params, config.visual_prefix_len, config.d_model)?;
        let adapter = if config.prompt_len > 0 {
            Some(DeepPromptAdapter::locate(
                &params,
                config.prompt_len,
                config.n_layers,
                config.d_model,
            )?)
        } else {
            None
        };
        let fresh = Self::new(config.clone())?;
        for (a, b) in fresh.params.groups().iter().zip(params.groups()) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    b.name,
                    b.tensor.shape(),
                    a.name,
                    a.tensor.shape()
                )));
            }
        }
        if fresh.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter groups, found {}",
                fresh.params.len(),
                params.len()
            )));
        }
        Ok(Self {
            config,
            params,
            lm,
            feature,
            adapter,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn feature_transformer(&self) -> &FeatureTransformer {
        &self.feature
    }

    pub fn adapter(&self) -> Option<&DeepPromptAdapter> {
        self.adapter.as_ref()
    }

    pub fn token_embedding_id(&self) -> usize {
        self.lm.token_embedding_id()
    }

    /// Builds the forward graph over already bound parameter leaves.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], batch: &EncodedBatch, last_only: bool) -> Result<ForwardPass> {
        let prefixes = batch
            .image_globals
            .iter()
            .map(|img| {
                let x = g.constant(Tensor::row_vector(img.clone()));
                self.feature.forward(g, vars, x)
            })
            .collect::<Result<Vec<_>>>()?;
        let prompts = match &self.adapter {
            Some(a) => Some(a.forward(g, vars)?),
            None => None,
        };
        let out = self
            .lm
            .forward(g, vars, &self.config, batch, &prefixes, prompts.as_deref(), last_only)?;
        Ok(ForwardPass {
            logits: out.logits,
            prefixes,
            prompts,
        })
    }

    pub fn logits(&self, batch: &EncodedBatch) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let pass = self.forward(&mut g, &vars, batch, false)?;
        Ok(g.value(pass.logits).clone())
    }

    /// Next-token logits at the final position of the generation stream.
    pub fn next_token_logits(&self, batch: &EncodedBatch) -> Result<Vec<Real>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let pass = self.forward(&mut g, &vars, batch, true)?;
        Ok(g.value(pass.logits).data().to_vec())
    }

    fn loss_graph(&self, g: &mut Graph, vars: &[Var], batch: &EncodedBatch) -> Result<Var> {
        if batch.labels.is_empty() {
            return Err(Error::EmptyMask);
        }
        let pass = self.forward(g, vars, batch, false)?;
        g.cross_entropy_masked(pass.logits, &batch.labels, &batch.loss_mask)
    }

    /// Mean cross-entropy over the supervised target positions.
    pub fn loss(&self, batch: &EncodedBatch) -> Result<Real> {
        self.loss_with(&self.params, batch)
    }

    /// Same as [`ModictModel::loss`] but evaluated at other parameter values
    /// with this model's layout.
    pub fn loss_with(&self, params: &ParamStore, batch: &EncodedBatch) -> Result<Real> {
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let loss = self.loss_graph(&mut g, &vars, batch)?;
        Ok(g.scalar(loss))
    }

    /// Loss and gradients for one instance. With `all_grads` frozen groups
    /// get gradients too.
    pub fn loss_and_grads(&self, batch: &EncodedBatch, all_grads: bool) -> Result<LossAndGrads> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, all_grads);
        let loss = self.loss_graph(&mut g, &vars, batch)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        let mut grads = g.backward(loss);
        Ok((value, vars.iter().map(|&v| grads.take(v)).collect()))
    }

    /// Mean loss over `batch`; gradients (averaged) land in the store's
    /// gradient buffers for trainable groups, or for all groups with
    /// `all_grads`. Instances run in parallel; the reduction order is fixed.
    pub fn accumulate_batch(&mut self, batch: &[EncodedBatch], all_grads: bool) -> Result<Real> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let results: Vec<LossAndGrads> = batch
            .par_iter()
            .map(|b| self.loss_and_grads(b, all_grads))
            .collect::<Result<_>>()?;
        let scale = 1.0 / batch.len() as Real;
        self.params.zero_grads();
        let mut total = 0.0;
        for (loss, grads) in &results {
            total += loss;
            self.params.accumulate_buffers(grads, scale);
        }
        Ok(total * scale)
    }
}
