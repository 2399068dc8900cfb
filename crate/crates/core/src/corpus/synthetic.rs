//! Seeded generator for a small e-commerce catalog: products with an image
//! feature, a long source text to mine keywords from, and a marketing
//! description of roughly 80 words.
//!
//! Colour, shape and size words appear in the description but are
//! image-derivable, so a model can only recover them from the image feature,
//! which is built from per-attribute embeddings plus noise.

use std::collections::{BTreeSet, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::incontext::word_pieces;
use crate::tensor::Real;

use super::dict::AttributeDictionaries;
use super::pipeline::{run_pipeline, PipelineOutput, RawProduct};

const COLORS: &[&str] = &[
    "black", "white", "red", "blue", "green", "brown", "grey", "pink", "beige", "navy", "yellow", "purple",
];
const SHAPES: &[&str] = &[
    "square",
    "round",
    "rectangular",
    "oval",
    "hexagonal",
    "cylindrical",
    "triangular",
    "curved",
];
const SIZES: &[&str] = &["small", "medium", "large", "mini"];
const STYLES: &[&str] = &[
    "retro",
    "minimalist",
    "casual",
    "elegant",
    "vintage",
    "sporty",
    "bohemian",
    "preppy",
    "urban chic",
    "korean style",
    "street fashion",
    "classic",
];
const MATERIALS: &[&str] = &[
    "leather",
    "canvas",
    "nylon",
    "suede",
    "denim",
    "vegan leather",
    "polyester",
    "velvet",
    "straw",
    "cowhide leather",
    "linen",
    "pu leather",
];
const ELEMENTS: &[&str] = &[
    "rivet",
    "tassel",
    "chain",
    "embroidery",
    "patchwork",
    "metal buckle",
    "stitching",
    "zipper",
    "plaid",
    "pearl",
    "bow",
    "letter print",
    "fringe",
    "studs",
    "woven strap",
];
const NOUNS: &[&str] = &[
    "bag",
    "tote",
    "backpack",
    "handbag",
    "satchel",
    "clutch",
    "wallet",
    "purse",
    "messenger",
    "bucket",
];
const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

const FILLERS: &[&str] = &[
    "it feels {0} and {1} for {2} days",
    "the {0} lining keeps your {1} and {2} in place",
    "a {0} choice for {1} trips and {2} outings",
    "inside there is room for {0} {1} and a {2}",
    "its {0} finish looks {1} with any {2} outfit",
    "carry it to {0} or {1} and enjoy the {2} touch",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSpec {
    pub brands: usize,
    pub styles: usize,
    pub materials: usize,
    pub elements: usize,
    pub colors: usize,
    pub shapes: usize,
    pub nouns: usize,
    pub other_words: usize,
}

impl Default for VocabSpec {
    fn default() -> Self {
        Self {
            brands: 20,
            styles: STYLES.len(),
            materials: MATERIALS.len(),
            elements: ELEMENTS.len(),
            colors: 8,
            shapes: 6,
            nouns: NOUNS.len(),
            other_words: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogConfig {
    pub n_samples: usize,
    pub category: String,
    pub seed: u64,
    pub visual_dim: usize,
    pub feature_noise: Real,
    pub vocab: VocabSpec,
    /// Target description length in words, drawn uniformly from this range.
    /// A maximum of 0 keeps only the core attribute sentence.
    pub description_words: (usize, usize),
    /// Non-attribute words appended to each source text, inclusive range.
    pub source_extra_words: (usize, usize),
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            category: "cases-bags".into(),
            seed: 0,
            visual_dim: 32,
            feature_noise: 0.1,
            vocab: VocabSpec::default(),
            description_words: (70, 88),
            source_extra_words: (4, 8),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCatalog {
    pub products: Vec<RawProduct>,
    pub dictionaries: AttributeDictionaries,
}

fn pseudo_word(mut n: usize) -> String {
    let mut s = String::new();
    for _ in 0..3 {
        let syl = n % (CONSONANTS.len() * VOWELS.len());
        n /= CONSONANTS.len() * VOWELS.len();
        s.push(CONSONANTS[syl / VOWELS.len()] as char);
        s.push(VOWELS[syl % VOWELS.len()] as char);
    }
    s
}

fn take(list: &[&str], n: usize, what: &str) -> Result<Vec<String>> {
    if n == 0 || n > list.len() {
        return Err(Error::Config(format!(
            "vocab spec asks for {n} {what}; between 1 and {} are available",
            list.len()
        )));
    }
    Ok(list[..n].iter().map(|s| s.to_string()).collect())
}

struct Vocab {
    brands: Vec<String>,
    styles: Vec<String>,
    materials: Vec<String>,
    elements: Vec<String>,
    colors: Vec<String>,
    shapes: Vec<String>,
    nouns: Vec<String>,
    others: Vec<String>,
}

impl Vocab {
    fn build(spec: &VocabSpec, min_others: usize) -> Result<Self> {
        if spec.brands == 0 {
            return Err(Error::Config("vocab spec needs at least one brand".into()));
        }
        if spec.other_words < min_others.max(3) {
            return Err(Error::Config(format!(
                "vocab spec has {} other words; at least {} are needed",
                spec.other_words,
                min_others.max(3)
            )));
        }
        // Pseudo-words are spaced out so brand and filler pools never overlap.
        let brands = (0..spec.brands).map(|i| pseudo_word(7 * i + 3)).collect();
        let others = (0..spec.other_words).map(|i| pseudo_word(7 * (i + spec.brands) + 5)).collect();
        Ok(Self {
            brands,
            styles: take(STYLES, spec.styles, "styles")?,
            materials: take(MATERIALS, spec.materials, "materials")?,
            elements: take(ELEMENTS, spec.elements, "popular elements")?,
            colors: take(COLORS, spec.colors, "colors")?,
            shapes: take(SHAPES, spec.shapes, "shapes")?,
            nouns: take(NOUNS, spec.nouns, "nouns")?,
            others,
        })
    }

    fn dictionaries(&self) -> Result<AttributeDictionaries> {
        let mut image: Vec<&str> = refs(&self.colors);
        image.extend(refs(&self.shapes));
        image.extend(SIZES);
        AttributeDictionaries::from_lists(
            &refs(&self.styles),
            &refs(&self.brands),
            &refs(&self.materials),
            &refs(&self.elements),
            &image,
        )
    }
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn word_count(text: &str) -> usize {
    word_pieces(text)
        .into_iter()
        .filter(|p| !p.chars().all(|c| c.is_ascii_punctuation()))
        .count()
}

struct Embeddings {
    table: HashMap<String, Vec<Real>>,
    dim: usize,
}

impl Embeddings {
    fn new(words: impl IntoIterator<Item = String>, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
        let scale = 1.0 / (dim as f64).sqrt();
        let table = words
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|w| {
                let v = (0..dim)
                    .map(|_| {
                        let x: f64 = StandardNormal.sample(&mut rng);
                        (x * scale) as Real
                    })
                    .collect();
                (w, v)
            })
            .collect();
        Self { table, dim }
    }

    fn add(&self, acc: &mut [Real], word: &str, weight: Real) {
        for (a, x) in acc.iter_mut().zip(&self.table[word]) {
            *a += weight * x;
        }
    }
}

/// Generates `cfg.n_samples` raw products and the dictionaries describing
/// their attribute vocabulary.
pub fn generate_synthetic_catalog(cfg: &CatalogConfig) -> Result<SyntheticCatalog> {
    let (lo, hi) = cfg.source_extra_words;
    if lo > hi || hi == 0 {
        return Err(Error::Config(format!("invalid source_extra_words range ({lo}, {hi})")));
    }
    if cfg.description_words.0 > cfg.description_words.1 {
        return Err(Error::Config("description_words minimum exceeds maximum".into()));
    }
    if cfg.visual_dim == 0 {
        return Err(Error::Config("visual_dim must be positive".into()));
    }
    if cfg.category.is_empty() || cfg.category.contains(char::is_whitespace) {
        return Err(Error::Config(format!("invalid category name `{}`", cfg.category)));
    }
    let vocab = Vocab::build(&cfg.vocab, hi)?;
    let dictionaries = vocab.dictionaries()?;
    let embed_words = vocab
        .colors
        .iter()
        .chain(&vocab.shapes)
        .chain(&vocab.styles)
        .chain(&vocab.materials)
        .chain(&vocab.nouns)
        .cloned()
        .chain(SIZES.iter().map(|s| s.to_string()));
    let emb = Embeddings::new(embed_words, cfg.visual_dim, cfg.seed);

    let mut products = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1 << 32 | i as u64);
        products.push(generate_product(cfg, &vocab, &emb, i, &mut rng));
    }
    Ok(SyntheticCatalog { products, dictionaries })
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &'a [String]) -> &'a str {
    xs.choose(rng).map(String::as_str).unwrap_or_default()
}

fn generate_product(cfg: &CatalogConfig, v: &Vocab, emb: &Embeddings, i: usize, rng: &mut ChaCha8Rng) -> RawProduct {
    let brand = pick(rng, &v.brands);
    let style = pick(rng, &v.styles);
    let material = pick(rng, &v.materials);
    let n_elements = if v.elements.len() > 1 { rng.random_range(1..=2) } else { 1 };
    let elements: Vec<&str> = v.elements.choose_multiple(rng, n_elements).map(String::as_str).collect();
    let color = pick(rng, &v.colors);
    let shape = pick(rng, &v.shapes);
    let size = *SIZES.choose(rng).unwrap_or(&"medium");
    let noun = pick(rng, &v.nouns);
    let n_extra = rng.random_range(cfg.source_extra_words.0..=cfg.source_extra_words.1);
    let extras: Vec<&str> = v.others.choose_multiple(rng, n_extra).map(String::as_str).collect();

    let mut source = vec![brand, style, material];
    source.extend(&elements);
    source.extend([size, color, shape, noun]);
    source.extend(&extras);

    let mut description = format!(
        "this {size} {color} {shape} {noun} from {brand} has a {style} look, made of {material} with {} details.",
        elements.join(" and ")
    );
    let (lo, hi) = cfg.description_words;
    if hi > 0 {
        let target = rng.random_range(lo..=hi);
        let mut pool: Vec<&str> = extras.clone();
        pool.extend(v.others.choose_multiple(rng, 12).map(String::as_str));
        while word_count(&description) < target {
            let template = FILLERS.choose(rng).copied().unwrap_or(FILLERS[0]);
            pool.shuffle(rng);
            let sentence = template
                .replace("{0}", pool[0])
                .replace("{1}", pool[1])
                .replace("{2}", pool[2]);
            description.push(' ');
            description.push_str(&sentence);
            description.push('.');
        }
    }

    let mut feature = vec![0.0; emb.dim];
    emb.add(&mut feature, color, 1.0);
    emb.add(&mut feature, shape, 1.0);
    emb.add(&mut feature, noun, 1.0);
    emb.add(&mut feature, size, 0.5);
    emb.add(&mut feature, style, 0.5);
    emb.add(&mut feature, material, 0.5);
    let noise_scale = cfg.feature_noise / (emb.dim as Real).sqrt();
    for f in &mut feature {
        let x: f64 = StandardNormal.sample(rng);
        *f += noise_scale * x as Real;
    }

    RawProduct {
        id: format!("{}-{i:05}", cfg.category),
        category: cfg.category.clone(),
        image_ref: None,
        image_feature: Some(feature),
        source_text: source.join(" "),
        description,
    }
}

/// Catalog generation followed by the keyword pipeline.
pub fn build_synthetic_corpus(cfg: &CatalogConfig) -> Result<(PipelineOutput, AttributeDictionaries)> {
    let catalog = generate_synthetic_catalog(cfg)?;
    let out = run_pipeline(&catalog.products, &catalog.dictionaries, cfg.seed)?;
    Ok((out, catalog.dictionaries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_words_are_distinct() {
        let words: BTreeSet<String> = (0..5000).map(pseudo_word).collect();
        assert_eq!(words.len(), 5000);
    }

    #[test]
    fn infeasible_specs_error() {
        let mut cfg = CatalogConfig::default();
        cfg.vocab.colors = 99;
        assert!(generate_synthetic_catalog(&cfg).is_err());
        let mut cfg = CatalogConfig::default();
        cfg.vocab.other_words = 2;
        assert!(generate_synthetic_catalog(&cfg).is_err());
        let mut cfg = CatalogConfig::default();
        cfg.vocab.brands = 0;
        assert!(generate_synthetic_catalog(&cfg).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = CatalogConfig {
            n_samples: 20,
            ..CatalogConfig::default()
        };
        assert_eq!(generate_synthetic_catalog(&cfg).unwrap(), generate_synthetic_catalog(&cfg).unwrap());
    }

    #[test]
    fn short_mode_keeps_core_sentence() {
        let cfg = CatalogConfig {
            n_samples: 5,
            description_words: (0, 0),
            ..CatalogConfig::default()
        };
        let cat = generate_synthetic_catalog(&cfg).unwrap();
        for p in &cat.products {
            assert!(word_count(&p.description) < 25, "{}", p.description);
        }
    }
}
