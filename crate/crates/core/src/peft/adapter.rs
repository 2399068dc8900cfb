use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

/// Deep continuous-prompt adapter.
///
/// `M * N` learnable base vectors (`M` per layer, `N` layers) pass through one
/// shared two-layer ReLU perceptron, `h_cp = relu(h_v W1 + b1) Wa + ba`; rows
/// `l*M .. (l+1)*M` of the result are the prompts of layer `l`.
#[derive(Debug, Clone)]
pub struct DeepPromptAdapter {
    pub base: usize,
    pub w1: usize,
    pub b1: usize,
    pub wa: usize,
    pub ba: usize,
    pub prompt_len: usize,
    pub n_layers: usize,
    pub d_model: usize,
}

impl DeepPromptAdapter {
    /// Base width `d_model`, hidden width `2 * d_model`. The output layer
    /// starts at zero so the first prompts are all zero.
    pub fn init(
        store: &mut ParamStore,
        prompt_len: usize,
        n_layers: usize,
        d_model: usize,
        std: Real,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if prompt_len == 0 || n_layers == 0 {
            return Err(Error::Config("adapter needs at least one prompt and one layer".into()));
        }
        let (d_a, d_h) = (d_model, 2 * d_model);
        let unit = Normal::new(0.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
        let hidden = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let n_base = prompt_len * n_layers;
        let base = Tensor::new(vec![n_base, d_a], (0..n_base * d_a).map(|_| unit.sample(rng)).collect())?;
        let w1 = Tensor::new(vec![d_a, d_h], (0..d_a * d_h).map(|_| hidden.sample(rng)).collect())?;
        Ok(Self {
            base: store.insert("adapter.base", base)?,
            w1: store.insert("adapter.w1", w1)?,
            b1: store.insert("adapter.b1", Tensor::zeros(&[d_h]))?,
            wa: store.insert("adapter.wa", Tensor::zeros(&[d_h, d_model]))?,
            ba: store.insert("adapter.ba", Tensor::zeros(&[d_model]))?,
            prompt_len,
            n_layers,
            d_model,
        })
    }

    pub fn locate(store: &ParamStore, prompt_len: usize, n_layers: usize, d_model: usize) -> Result<Self> {
        let id = |n: &str| store.id(n).ok_or_else(|| Error::Checkpoint(format!("missing parameter `{n}`")));
        Ok(Self {
            base: id("adapter.base")?,
            w1: id("adapter.w1")?,
            b1: id("adapter.b1")?,
            wa: id("adapter.wa")?,
            ba: id("adapter.ba")?,
            prompt_len,
            n_layers,
            d_model,
        })
    }

    fn check(&self, g: &Graph, vars: &[Var]) -> Result<()> {
        let base = g.value(vars[self.base]);
        let wa = g.value(vars[self.wa]);
        if base.rows() != self.prompt_len * self.n_layers || wa.cols() != self.d_model {
            return Err(Error::Shape {
                op: "adapter_forward",
                lhs: base.shape().to_vec(),
                rhs: vec![self.prompt_len, self.n_layers, self.d_model],
            });
        }
        Ok(())
    }

    /// Returns the ReLU hidden activations and the per-layer prompt nodes.
    pub fn forward_with_hidden(&self, g: &mut Graph, vars: &[Var]) -> Result<(Var, Vec<Var>)> {
        self.check(g, vars)?;
        let h = g.linear(vars[self.base], vars[self.w1], vars[self.b1])?;
        let h = g.relu(h);
        let out = g.linear(h, vars[self.wa], vars[self.ba])?;
        let layers = (0..self.n_layers)
            .map(|l| g.slice_rows(out, l * self.prompt_len, self.prompt_len))
            .collect::<Result<Vec<_>>>()?;
        Ok((h, layers))
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var]) -> Result<Vec<Var>> {
        Ok(self.forward_with_hidden(g, vars)?.1)
    }
}

/// Evaluates the adapter outside a training graph: `n_layers` tensors of
/// `M x d_model` each.
pub fn adapter_forward(adapter: &DeepPromptAdapter, store: &ParamStore, n_layers: usize) -> Result<Vec<Tensor>> {
    if n_layers != adapter.n_layers {
        return Err(Error::Config(format!(
            "adapter built for {} layers, asked for {n_layers}",
            adapter.n_layers
        )));
    }
    let mut g = Graph::new();
    let vars = store.bind(&mut g, false);
    let layers = adapter.forward(&mut g, &vars)?;
    Ok(layers.into_iter().map(|v| g.value(v).clone()).collect())
}
