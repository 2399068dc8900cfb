mod common;

use common::oracle::{brute_force_distinct, plain_tokens};
use modict::metrics::{bleu_n, distinct_n_corpus, evaluate_run, lcs_len, rouge, MetricOptions, RougeVariant, TextRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toks(s: &str) -> Vec<String> {
    MetricOptions::default().tokenize(s)
}

fn random_corpus(rng: &mut ChaCha8Rng, vocab: usize) -> Vec<String> {
    let n_docs = rng.random_range(1..6);
    (0..n_docs)
        .map(|_| {
            let len = rng.random_range(1..15);
            let mut words: Vec<String> = (0..len).map(|_| format!("t{}", rng.random_range(0..vocab))).collect();
            if rng.random_bool(0.3) {
                words.push(".".into());
            }
            if rng.random_bool(0.2) {
                words.insert(0, "\"".into());
            }
            words.join(if rng.random_bool(0.5) { " " } else { "  " })
        })
        .collect()
}

#[test]
fn distinct_n_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = MetricOptions::default();
    for _ in 0..100 {
        let corpus = random_corpus(&mut rng, 8);
        for n in 2..=5 {
            assert_eq!(distinct_n_corpus(&corpus, n, &opts).unwrap(), brute_force_distinct(&corpus, n));
        }
    }
    let hand = vec!["a b a b".to_string()];
    assert_eq!(distinct_n_corpus(&hand, 2, &opts).unwrap(), 50.0);
}

#[test]
fn tokenizer_agrees_with_plain_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        for d in random_corpus(&mut rng, 20) {
            assert_eq!(toks(&d), plain_tokens(&d));
        }
    }
}

#[test]
fn hand_cases() {
    let b = bleu_n(&[toks("the cat sat")], &[toks("the cat ran")], 1).unwrap();
    assert!((b - 66.67).abs() < 0.01, "{b}");
    let r = rouge(&[toks("a b c d")], &[toks("a c d e")], RougeVariant::L).unwrap();
    assert!((r - 75.0).abs() < 0.01, "{r}");
}

#[test]
fn identity_and_disjoint() {
    let refs = vec![toks("a red leather bag"), toks("blue canvas tote with zip")];
    let other = vec![toks("x y z w"), toks("q r s t u v")];
    for n in [1, 2] {
        assert!((bleu_n(&refs, &refs, n).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(bleu_n(&other, &refs, n).unwrap(), 0.0);
    }
    for v in [RougeVariant::One, RougeVariant::L] {
        assert!((rouge(&refs, &refs, v).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(rouge(&other, &refs, v).unwrap(), 0.0);
    }
}

#[test]
fn evaluate_run_reports_misaligned_ids() {
    let rec = |id: &str, t: &str| TextRecord {
        id: id.into(),
        text: t.into(),
    };
    let refs = vec![rec("a", "x y"), rec("b", "y z")];
    let preds = vec![rec("a", "x y"), rec("c", "y z")];
    let err = evaluate_run(&preds, &refs, &MetricOptions::default()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains('b') && msg.contains('c'), "{msg}");
    let swapped = vec![rec("b", "y z"), rec("a", "x y")];
    let report = evaluate_run(&swapped, &refs, &MetricOptions::default()).unwrap();
    assert!((report.bleu1 - 100.0).abs() < 1e-9);
    assert!(report.in_range());
}

fn brute_lcs(a: &[String], b: &[String]) -> usize {
    // Longest common subsequence by enumerating subsets of the shorter side.
    let (s, l) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << s.len()) {
        let sub: Vec<&String> = (0..s.len()).filter(|i| mask & (1 << i) != 0).map(|i| &s[i]).collect();
        let mut it = l.iter();
        if sub.iter().all(|x| it.any(|y| y == *x)) {
            best = best.max(sub.len());
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lcs_matches_subset_enumeration(a in proptest::collection::vec(0u8..4, 0..9), b in proptest::collection::vec(0u8..4, 0..12)) {
        let a: Vec<String> = a.iter().map(|x| x.to_string()).collect();
        let b: Vec<String> = b.iter().map(|x| x.to_string()).collect();
        prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
    }

    #[test]
    fn scores_stay_in_range(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<Vec<String>> = random_corpus(&mut rng, 6).iter().map(|d| toks(d)).collect();
        let r: Vec<Vec<String>> = (0..c.len()).map(|_| toks(&random_corpus(&mut rng, 6)[0])).collect();
        for v in [bleu_n(&c, &r, 1).unwrap(), bleu_n(&c, &r, 2).unwrap(),
                  rouge(&c, &r, RougeVariant::One).unwrap(), rouge(&c, &r, RougeVariant::L).unwrap()] {
            prop_assert!(v.is_finite() && (0.0..=100.0 + 1e-9).contains(&v));
        }
    }

    #[test]
    fn distinct_n_is_bounded_by_token_count(seed in 0u64..10_000, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng, 30);
        let d = distinct_n_corpus(&corpus, n, &MetricOptions::default()).unwrap();
        prop_assert!(d > 0.0 || corpus.iter().map(|s| toks(s).len()).sum::<usize>() < n);
        prop_assert!(d <= 100.0);
    }
}
