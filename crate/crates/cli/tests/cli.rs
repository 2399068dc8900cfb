use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_modict");

fn tiny_config(out_dir: &Path) -> String {
    format!(
        r#"
seed = 5
shots = 1
freeze_plan = "decoder-only-adapter"

[paths]
out_dir = "{}"

[corpus]
test_fraction = 0.2

[corpus.synthetic]
n_samples = 30
visual_dim = 8
description_words = [0, 0]

[model]
arch = "decoder-only"
n_layers = 2
d_model = 16
n_heads = 2
d_ff = 32
max_seq_len = 128
visual_prefix_len = 2
prompt_len = 2

[train]
lr_peak = 1e-3
warmup_steps = 2
epochs = 1
batch_size = 4

[gen]
beam = 2
samples = 4
max_new_tokens = 8
"#,
        out_dir.display()
    )
}

struct Run {
    _tmp: TempDir,
    config: PathBuf,
    out: PathBuf,
}

impl Run {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        let out = tmp.path().join("run");
        let config = tmp.path().join("run.toml");
        fs::write(&config, tiny_config(&out)).unwrap();
        Self { _tmp: tmp, config, out }
    }

    fn cmd(&self, args: &[&str]) -> Output {
        let mut all = vec![args[0], "--config", self.config.to_str().unwrap()];
        all.extend_from_slice(&args[1..]);
        Command::new(BIN).args(&all).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.cmd(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn read(&self, rel: &str) -> Vec<u8> {
        fs::read(self.out.join(rel)).unwrap()
    }
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

fn ids_of(jsonl: &[u8]) -> Vec<String> {
    String::from_utf8_lossy(jsonl)
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["id"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn build_corpus_is_reproducible_and_counts_match() {
    let (a, b) = (Run::new(), Run::new());
    a.ok(&["build-corpus"]);
    b.ok(&["build-corpus"]);
    for f in ["corpus/train.jsonl", "corpus/test.jsonl", "corpus/dictionaries/brand.txt"] {
        assert_eq!(a.read(f), b.read(f), "{f}");
    }
    let manifest = json(&a.read("corpus/manifest.json"));
    let train = ids_of(&a.read("corpus/train.jsonl")).len();
    let test = ids_of(&a.read("corpus/test.jsonl")).len();
    assert_eq!(manifest["counts"]["retained"].as_u64().unwrap() as usize, train + test);
    assert_eq!(manifest["counts"]["train"].as_u64().unwrap() as usize, train);
    assert_eq!(manifest["seed"], 5);
    assert!(a.out.join("corpus/config.toml").exists());
}

#[test]
fn missing_dictionary_path_fails_with_diagnostic() {
    let run = Run::new();
    let raw = run.out.parent().unwrap().join("raw.jsonl");
    fs::write(&raw, "").unwrap();
    let out = run.cmd(&[
        "build-corpus",
        "--set",
        &format!("paths.raw_products=\"{}\"", raw.display()),
        "--set",
        "paths.dictionaries=\"/nonexistent/dicts\"",
    ]);
    assert!(!out.status.success());
    let diag: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(diag["error"], "io");
    assert!(diag["message"].as_str().unwrap().contains("/nonexistent/dicts"));
    assert!(!run.out.join("corpus").exists());
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let run = Run::new();
    let out = run.cmd(&["build-corpus", "--set", "train.no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    let diag: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(diag["error"], "toml");
}

#[test]
fn invalid_plan_for_arch_is_rejected() {
    let run = Run::new();
    let out = run.cmd(&["train", "--set", "freeze_plan=seq2seq-half-encoder"]);
    assert_eq!(out.status.code(), Some(2));
    let diag: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(diag["error"], "plan");
}

#[test]
fn index_header_matches_pool_and_rebuild_is_identical() {
    let run = Run::new();
    run.ok(&["build-corpus"]);
    run.ok(&["build-index", "--category", "cases-bags"]);
    let first = run.read("index/cases-bags.idx");
    run.ok(&["build-index", "--category", "cases-bags"]);
    assert_eq!(first, run.read("index/cases-bags.idx"));
    // magic (8) + category length (4) + "cases-bags" (10) + d_v (8), then the pool size.
    let pool = u64::from_le_bytes(first[30..38].try_into().unwrap()) as usize;
    assert_eq!(pool, ids_of(&run.read("corpus/train.jsonl")).len());
    let out = run.cmd(&["build-index", "--category", "clothing"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_generate_evaluate_pipeline() {
    let (a, b) = (Run::new(), Run::new());
    for run in [&a, &b] {
        run.ok(&["build-corpus"]);
        run.ok(&["train"]);
        run.ok(&["generate"]);
    }
    assert_eq!(a.read("train/train_log.jsonl"), b.read("train/train_log.jsonl"));
    assert_eq!(a.read("train/checkpoint.bin"), b.read("train/checkpoint.bin"));
    assert_eq!(a.read("generate/predictions.jsonl"), b.read("generate/predictions.jsonl"));

    // References come from the training split only.
    let train: BTreeSet<String> = ids_of(&a.read("corpus/train.jsonl")).into_iter().collect();
    let test = ids_of(&a.read("corpus/test.jsonl"));
    let prov = String::from_utf8(a.read("generate/provenance.jsonl")).unwrap();
    let mut seen = 0;
    for line in prov.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let refs = v["reference_ids"].as_array().unwrap();
        assert_eq!(refs.len(), 1);
        for r in refs {
            assert!(train.contains(r.as_str().unwrap()));
        }
        seen += 1;
    }
    assert_eq!(seen, test.len());
    assert_eq!(ids_of(&a.read("generate/predictions.jsonl")), test);

    let table = a.ok(&["evaluate"]);
    assert!(table.starts_with("variant"));
    let report = json(&a.read("evaluate/report.json"));
    for key in ["bleu1", "bleu2", "rouge1_f", "rougeL_f", "d2", "d3", "d4", "d5"] {
        let v = report[key].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&v), "{key} = {v}");
    }
    let manifest = json(&a.read("evaluate/manifest.json"));
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 2);
}

#[test]
fn resume_continues_the_step_counter() {
    let run = Run::new();
    run.ok(&["build-corpus"]);
    let first = json(run.ok(&["train"]).as_bytes());
    let steps = first["final_step"].as_u64().unwrap();
    assert!(steps > 0);
    let second = json(run.ok(&["train", "--resume", "--set", "train.epochs=2"]).as_bytes());
    assert_eq!(second["first_step"].as_u64().unwrap(), steps);
    assert_eq!(second["final_step"].as_u64().unwrap(), 2 * steps);
    let log = String::from_utf8(run.read("train/train_log.jsonl")).unwrap();
    let logged: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(logged, (1..=2 * steps).collect::<Vec<_>>());

    // A model-shape change makes the checkpoint incompatible.
    let out = run.cmd(&["train", "--resume", "--set", "model.d_model=32"]);
    assert_eq!(out.status.code(), Some(1));
    let diag: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(diag["error"], "checkpoint");
}

#[test]
fn zero_shot_generation_uses_no_references() {
    let run = Run::new();
    run.ok(&["build-corpus"]);
    run.ok(&["train", "--set", "shots=0"]);
    run.ok(&["generate", "--set", "shots=0"]);
    let prov = String::from_utf8(run.read("generate/provenance.jsonl")).unwrap();
    assert!(prov.lines().all(|l| {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        v["reference_ids"].as_array().unwrap().is_empty()
    }));
}
