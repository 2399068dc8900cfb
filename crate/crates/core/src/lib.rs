//! Multimodal in-context tuning on a small, dependency-light transformer.
//!
//! The crate covers the whole loop: tensors with reverse-mode autodiff, an
//! encoder-decoder or decoder-only transformer, a visual feature transformer
//! that turns image vectors into prefix tokens, a deep-prompt adapter,
//! similarity retrieval of in-context references, training, beam-sample
//! decoding, and BLEU/ROUGE/distinct-n evaluation.

pub mod autograd;
pub mod corpus;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod incontext;
pub mod metrics;
pub mod model;
pub mod params;
pub mod peft;
pub mod retrieval;
pub mod tensor;
pub mod trainer;
pub mod transformer;

pub use error::{Error, Result};
pub use model::ModictModel;
pub use tensor::{Real, Tensor};
