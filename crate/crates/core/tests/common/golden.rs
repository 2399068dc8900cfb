//! Fixed samples behind the stored template fixtures in `tests/golden`.

use std::path::PathBuf;

use modict::corpus::Sample;
use modict::dataset::{build_instances, build_vocabulary, ReferencePool};
use modict::incontext::{assemble_template, encode_instance, special, EncodeConfig, InContextInstance, Vocabulary};
use modict::retrieval::SyntheticEncoder;
use modict::transformer::Arch;
use modict::Real;

fn sample(id: &str, feature: [Real; 3], keywords: &[&str], description: &str) -> Sample {
    Sample {
        id: id.into(),
        category: "cases-bags".into(),
        image_ref: None,
        image_feature: Some(feature.to_vec()),
        keywords: keywords.iter().map(|s| s.to_string()).collect(),
        description: description.into(),
    }
}

pub fn train_samples() -> Vec<Sample> {
    vec![
        sample("far", [0.0, 0.0, 1.0], &["suede"], "a dark suede clutch."),
        sample("mid", [0.5, 0.5, 0.0], &["canvas"], "a roomy canvas tote."),
        sample("near", [0.9, 0.1, 0.0], &["nylon", "minimalist"], "light nylon backpack for travel."),
    ]
}

pub fn query_sample() -> Sample {
    sample("q", [1.0, 0.0, 0.0], &["leather", "retro"], "a soft leather bag with retro trim.")
}

/// The query's instance with `shots` retrieved references.
pub fn instance(shots: usize, with_target: bool) -> (InContextInstance, Vocabulary) {
    let train = train_samples();
    let mut all = train.clone();
    all.push(query_sample());
    let enc = SyntheticEncoder::new(3, 0).unwrap();
    let pool = ReferencePool::new(&train, &enc).unwrap();
    let inst = build_instances(&[query_sample()], &pool, &enc, shots, with_target).unwrap();
    (inst.into_iter().next().unwrap(), build_vocabulary(&all))
}

pub fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn rendered(shots: usize) -> String {
    let (inst, _) = instance(shots, false);
    assemble_template(&inst, ", ")
}

/// Source tokens on the first line, supervised labels on the second.
pub fn token_dump_one_shot() -> String {
    let (inst, vocab) = instance(1, true);
    let b = encode_instance(&inst, &vocab, &EncodeConfig::new(Arch::DecoderOnly, 2, 128)).unwrap();
    let name = |id: usize| vocab.token(id).unwrap_or(special::NAMES[special::UNK]).to_string();
    let source: Vec<String> = b.source_ids.iter().map(|&t| name(t)).collect();
    let labels: Vec<String> = b
        .labels
        .iter()
        .zip(&b.loss_mask)
        .filter(|(_, &m)| m)
        .map(|(&t, _)| name(t))
        .collect();
    format!("{}\n{}\n", source.join(" "), labels.join(" "))
}

/// `(fixture, rendered)` pairs for every stored fixture.
pub fn all_cases() -> Vec<(&'static str, String)> {
    vec![
        ("template_0shot.txt", rendered(0)),
        ("template_1shot.txt", rendered(1)),
        ("template_2shot.txt", rendered(2)),
        ("tokens_1shot_decoder_only.txt", token_dump_one_shot()),
    ]
}
