use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::incontext::word_pieces;
use crate::tensor::Real;

use super::dict::{segment_with_dictionaries, AttributeDictionaries};
use super::sample::Sample;

/// A product before keyword extraction. `source_text` is the long product
/// text that gets segmented; `description` is the generation target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawProduct {
    pub id: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_feature: Option<Vec<Real>>,
    pub source_text: String,
    pub description: String,
}

/// How a keyword list was assembled, for auditing the selection rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordAudit {
    pub attribute_hits: Vec<String>,
    /// Distinct remaining tokens after dropping image-derivable words,
    /// attribute hits and punctuation.
    pub remaining: usize,
    pub extras: Vec<String>,
}

fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| c.is_ascii_punctuation())
}

/// Drops image-derivable tokens, keeps every marketing-attribute hit and adds
/// `floor(0.2 * r)` tokens sampled without replacement from the `r` distinct
/// remaining tokens. Order: hits first, then extras, duplicates removed.
pub fn select_keywords(tokens: &[String], dicts: &AttributeDictionaries, rng: &mut impl Rng) -> (Vec<String>, KeywordAudit) {
    let mut hits: Vec<String> = Vec::new();
    let mut remaining: Vec<String> = Vec::new();
    for t in tokens {
        if dicts.is_image_derivable(t) || is_punctuation(t) || t == "\n" {
            continue;
        }
        let bucket = if dicts.is_marketing(t) { &mut hits } else { &mut remaining };
        if !bucket.contains(t) {
            bucket.push(t.clone());
        }
    }
    let r = remaining.len();
    let n_extra = r / 5;
    let mut picked = sample_indices(rng, r, n_extra).into_vec();
    picked.sort_unstable();
    let extras: Vec<String> = picked.into_iter().map(|i| remaining[i].clone()).collect();
    let keywords = hits.iter().chain(&extras).cloned().collect();
    (
        keywords,
        KeywordAudit {
            attribute_hits: hits,
            remaining: r,
            extras,
        },
    )
}

/// True when the pieces of `keyword` occur contiguously in `description`.
pub fn contains_keyword(description: &str, keyword: &str) -> bool {
    let hay = word_pieces(description);
    let needle = word_pieces(keyword);
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle.as_slice())
}

/// Keeps samples whose description contains at least one keyword verbatim.
pub fn filter_samples(samples: Vec<Sample>) -> Vec<Sample> {
    samples
        .into_iter()
        .filter(|s| s.keywords.iter().any(|k| contains_keyword(&s.description, k)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub samples: Vec<Sample>,
    pub audits: Vec<KeywordAudit>,
    pub dropped: Vec<String>,
}

/// Per-product rng stream derived from the pipeline seed and position.
fn product_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Segmentation, keyword selection and containment filtering. A pure
/// function of the products, dictionaries and seed.
pub fn run_pipeline(products: &[RawProduct], dicts: &AttributeDictionaries, seed: u64) -> Result<PipelineOutput> {
    dicts.validate()?;
    let mut out = PipelineOutput {
        samples: Vec::new(),
        audits: Vec::new(),
        dropped: Vec::new(),
    };
    for (i, p) in products.iter().enumerate() {
        let tokens = segment_with_dictionaries(&p.source_text, dicts);
        let (keywords, audit) = select_keywords(&tokens, dicts, &mut product_rng(seed, i));
        let sample = Sample {
            id: p.id.clone(),
            category: p.category.clone(),
            image_ref: p.image_ref.clone(),
            image_feature: p.image_feature.clone(),
            keywords,
            description: p.description.clone(),
        };
        sample.validate()?;
        if sample.keywords.iter().any(|k| contains_keyword(&sample.description, k)) {
            out.samples.push(sample);
            out.audits.push(audit);
        } else {
            out.dropped.push(p.id.clone());
        }
    }
    Ok(out)
}
