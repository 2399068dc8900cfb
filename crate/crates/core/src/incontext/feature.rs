use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

/// `L` prefix vectors in the language model's embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualPrefix {
    pub vectors: Tensor,
}

impl VisualPrefix {
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }
}

/// Two-layer Tanh perceptron mapping a global image vector (`d_v`) to
/// `prefix_len` vectors of width `d_model`:
/// `reshape(tanh(g W1 + b1) W2 + b2)`.
#[derive(Debug, Clone)]
pub struct FeatureTransformer {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub visual_dim: usize,
    pub hidden: usize,
    pub prefix_len: usize,
    pub d_model: usize,
}

impl FeatureTransformer {
    /// Hidden width equals `d_model`.
    pub fn init(
        store: &mut ParamStore,
        visual_dim: usize,
        prefix_len: usize,
        d_model: usize,
        std: Real,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let hidden = d_model;
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let mut sample = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect())
        };
        let out = prefix_len * d_model;
        Ok(Self {
            w1: store.insert("feature.w1", sample(&[visual_dim, hidden])?)?,
            b1: store.insert("feature.b1", Tensor::zeros(&[hidden]))?,
            w2: store.insert("feature.w2", sample(&[hidden, out])?)?,
            b2: store.insert("feature.b2", Tensor::zeros(&[out]))?,
            visual_dim,
            hidden,
            prefix_len,
            d_model,
        })
    }

    pub fn locate(store: &ParamStore, prefix_len: usize, d_model: usize) -> Result<Self> {
        let id = |n: &str| store.id(n).ok_or_else(|| Error::Checkpoint(format!("missing parameter `{n}`")));
        let w1 = id("feature.w1")?;
        let shape = store.get(w1).tensor.shape().to_vec();
        Ok(Self {
            w1,
            b1: id("feature.b1")?,
            w2: id("feature.w2")?,
            b2: id("feature.b2")?,
            visual_dim: shape[0],
            hidden: shape[1],
            prefix_len,
            d_model,
        })
    }

    /// Graph version; `global` is a `1 x d_v` node. Returns `L x d_model`.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], global: Var) -> Result<Var> {
        let gv = g.value(global);
        if gv.numel() != self.visual_dim {
            return Err(Error::Shape {
                op: "transform_feature",
                lhs: gv.shape().to_vec(),
                rhs: vec![self.visual_dim],
            });
        }
        let h = g.linear(global, vars[self.w1], vars[self.b1])?;
        let h = g.tanh(h);
        let out = g.linear(h, vars[self.w2], vars[self.b2])?;
        g.reshape(out, &[self.prefix_len, self.d_model])
    }
}

/// Evaluates the feature transformer outside any training graph.
pub fn transform_feature(global: &[Real], ft: &FeatureTransformer, store: &ParamStore) -> Result<VisualPrefix> {
    let mut g = Graph::new();
    let vars = store.bind(&mut g, false);
    let x = g.constant(Tensor::row_vector(global.to_vec()));
    let out = ft.forward(&mut g, &vars, x)?;
    Ok(VisualPrefix {
        vectors: g.value(out).clone(),
    })
}
