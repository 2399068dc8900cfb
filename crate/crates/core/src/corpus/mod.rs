//! Catalog construction: attribute dictionaries, keyword mining, the
//! containment filter and a seeded synthetic catalog.

mod dict;
mod pipeline;
mod sample;
mod synthetic;

pub use dict::{segment_with_dictionaries, AttributeDictionaries, DICTIONARY_FILES};
pub use pipeline::{contains_keyword, filter_samples, run_pipeline, select_keywords, KeywordAudit, PipelineOutput, RawProduct};
pub use sample::{corpus_to_string, parse_corpus, read_corpus, write_corpus, Sample};
pub use synthetic::{build_synthetic_corpus, generate_synthetic_catalog, CatalogConfig, SyntheticCatalog, VocabSpec};
