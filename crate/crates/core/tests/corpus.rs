use modict::corpus::{
    build_synthetic_corpus, contains_keyword, corpus_to_string, filter_samples, generate_synthetic_catalog, CatalogConfig,
};
use modict::incontext::word_pieces;

fn words(text: &str) -> usize {
    word_pieces(text)
        .into_iter()
        .filter(|p| !p.chars().all(|c| c.is_ascii_punctuation()))
        .count()
}

#[test]
fn thousand_sample_catalog_statistics() {
    let cfg = CatalogConfig {
        n_samples: 1000,
        seed: 11,
        ..CatalogConfig::default()
    };
    let (out, dicts) = build_synthetic_corpus(&cfg).unwrap();
    assert_eq!(out.samples.len() + out.dropped.len(), 1000);
    // Every sample carries its attribute phrases in the description.
    assert!(out.dropped.is_empty());
    let n = out.samples.len() as f64;
    let mean_kw = out.samples.iter().map(|s| s.keywords.len()).sum::<usize>() as f64 / n;
    let mean_len = out.samples.iter().map(|s| words(&s.description)).sum::<usize>() as f64 / n;
    eprintln!("mean keywords {mean_kw:.2}, mean description words {mean_len:.2}");
    assert!((mean_kw - 5.4).abs() <= 1.0, "{mean_kw}");
    assert!((mean_len - 80.0).abs() <= 10.0, "{mean_len}");
    for (s, audit) in out.samples.iter().zip(&out.audits) {
        assert!(s.keywords.iter().any(|k| contains_keyword(&s.description, k)));
        assert!(s.keywords.iter().all(|k| !dicts.is_image_derivable(k)));
        assert_eq!(audit.extras.len(), audit.remaining / 5);
    }
}

#[test]
fn every_generated_sample_passes_the_filter() {
    let cfg = CatalogConfig {
        n_samples: 300,
        seed: 4,
        ..CatalogConfig::default()
    };
    let (out, _) = build_synthetic_corpus(&cfg).unwrap();
    let n = out.samples.len();
    assert_eq!(filter_samples(out.samples).len(), n);
}

#[test]
fn hundred_sample_corpus_is_byte_identical() {
    let cfg = CatalogConfig {
        n_samples: 100,
        seed: 21,
        ..CatalogConfig::default()
    };
    let a = corpus_to_string(&build_synthetic_corpus(&cfg).unwrap().0.samples).unwrap();
    let b = corpus_to_string(&build_synthetic_corpus(&cfg).unwrap().0.samples).unwrap();
    assert_eq!(a, b);
    let other = CatalogConfig { seed: 22, ..cfg };
    let c = corpus_to_string(&build_synthetic_corpus(&other).unwrap().0.samples).unwrap();
    assert_ne!(a, c);
}

#[test]
fn image_features_have_configured_width() {
    let cfg = CatalogConfig {
        n_samples: 10,
        visual_dim: 12,
        ..CatalogConfig::default()
    };
    let cat = generate_synthetic_catalog(&cfg).unwrap();
    assert!(cat.products.iter().all(|p| p.image_feature.as_ref().unwrap().len() == 12));
}
