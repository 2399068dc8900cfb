mod common;

use common::golden;

#[test]
fn templates_match_stored_fixtures() {
    for (name, actual) in golden::all_cases() {
        let expected = std::fs::read(golden::path(name)).unwrap();
        assert_eq!(
            actual.as_bytes(),
            expected.as_slice(),
            "{name}:\n{actual}\n---\n{}",
            String::from_utf8_lossy(&expected)
        );
    }
}

#[test]
fn nearest_reference_sits_next_to_the_query() {
    let (inst, _) = golden::instance(2, false);
    let ids: Vec<&str> = inst.references.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["mid", "near"]);
}

#[test]
fn zero_shot_instance_has_one_image() {
    let (inst, vocab) = golden::instance(0, true);
    let cfg = modict::incontext::EncodeConfig::new(modict::transformer::Arch::EncoderDecoder, 3, 64);
    let b = modict::incontext::encode_instance(&inst, &vocab, &cfg).unwrap();
    assert_eq!(b.image_globals.len(), 1);
    assert_eq!(b.slot_map.occurrences.len(), 1);
    assert_eq!(b.slot_map.occurrences[0].len(), 3);
    assert!(b.spans.references.is_empty());
}
