//! In-context reference construction: the image feature transformer, the
//! prompt template, word tokenisation and per-instance encoding with
//! target-only loss masks.

mod encode;
mod feature;
mod template;
mod tokenizer;

pub use encode::{encode_instance, EncodeConfig, EncodedBatch, ReferenceSpan, Spans};
pub use feature::{transform_feature, FeatureTransformer, VisualPrefix};
pub use template::{assemble_template, InContextInstance, Query, Reference, DEFAULT_KEYWORD_SEPARATOR};
pub use tokenizer::{normalize_text, word_pieces, TokenId, Vocabulary};

/// Reserved token ids. These occupy the first lines of every vocabulary file.
pub mod special {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const IMG: usize = 3;
    pub const UNK: usize = 4;
    /// Separator between in-context clauses (`\n` in template text).
    pub const NL: usize = 5;

    pub const NAMES: [&str; 6] = ["<pad>", "<bos>", "<eos>", "<img>", "<unk>", "<nl>"];
}
