//! Reproducible runs: a TOML run configuration and one function per
//! pipeline stage (corpus, index, train, generate, evaluate, ablate).
//!
//! Every stage writes into its own directory under `paths.out_dir`:
//! the resolved `config.toml`, a `manifest.json` with the config hash, seed
//! and SHA-256 digests of inputs and outputs, and its artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    build_synthetic_corpus, read_corpus, run_pipeline, write_corpus, AttributeDictionaries, CatalogConfig,
    PipelineOutput, RawProduct, Sample,
};
use crate::dataset::{build_instances, build_vocabulary, ReferencePool};
use crate::decoder::{generate_all, GenConfig};
use crate::error::{Error, Result};
use crate::incontext::{encode_instance, EncodeConfig, EncodedBatch, InContextInstance, Vocabulary};
use crate::metrics::{evaluate_run, format_table, read_records, records_to_string, MetricOptions, MetricsReport, TextRecord};
use crate::model::ModictModel;
use crate::peft::FreezePlan;
use crate::retrieval::{build_index, encoder_by_name, ImageEncoder, RetrievalIndex};
use crate::tensor::Real;
use crate::trainer::{config_hash, write_log_record, Checkpoint, TrainConfig, Trainer};
use crate::transformer::{Arch, ModelConfig};

/// Model hyperparameters; vocabulary size and image width come from data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub visual_prefix_len: usize,
    pub prompt_len: usize,
    #[serde(default = "default_init_std")]
    pub init_std: Real,
}

fn default_init_std() -> Real {
    0.02
}

impl ModelSpec {
    pub fn resolve(&self, vocab_size: usize, visual_dim: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size,
            max_seq_len: self.max_seq_len,
            visual_prefix_len: self.visual_prefix_len,
            prompt_len: self.prompt_len,
            visual_dim,
            init_std: self.init_std,
            init_seed: seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
    /// Raw products (JSON lines) to run through the keyword pipeline instead
    /// of generating a synthetic catalog. Requires `dictionaries`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_products: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dictionaries: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            raw_products: None,
            dictionaries: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Share of each category held out for generation and evaluation.
    pub test_fraction: Real,
    pub synthetic: CatalogConfig,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            test_fraction: 0.1,
            synthetic: CatalogConfig::default(),
        }
    }
}

/// Ablation rows: in-context tuning with the architecture's own plan, the
/// same without references, full fine-tuning, and the adapter-free plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "modict-1shot")]
    Modict1Shot,
    #[serde(rename = "w/o-mict")]
    WithoutMict,
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no-adapter")]
    NoAdapter,
    #[serde(rename = "no-adapter-no-mict")]
    NoAdapterNoMict,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Modict1Shot,
        Variant::WithoutMict,
        Variant::Full,
        Variant::NoAdapter,
        Variant::NoAdapterNoMict,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Modict1Shot => "modict-1shot",
            Variant::WithoutMict => "w/o-mict",
            Variant::Full => "full",
            Variant::NoAdapter => "no-adapter",
            Variant::NoAdapterNoMict => "no-adapter-no-mict",
        }
    }

    pub fn dir_name(self) -> String {
        self.name().replace('/', "")
    }

    /// The run configuration for this row, derived from `base`.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let primary = match base.model.arch {
            Arch::DecoderOnly => FreezePlan::DecoderOnlyAdapter,
            Arch::EncoderDecoder => FreezePlan::Seq2seqHalfEncoder,
        };
        let mut cfg = base.clone();
        let (plan, shots) = match self {
            Variant::Modict1Shot => (primary, 1),
            Variant::WithoutMict => (primary, 0),
            Variant::Full => (FreezePlan::Full, 1),
            Variant::NoAdapter => (FreezePlan::NoAdapter, 1),
            Variant::NoAdapterNoMict => (FreezePlan::NoAdapterNoMict, 0),
        };
        if plan.requires_adapter() == Some(false) {
            cfg.model.prompt_len = 0;
        }
        cfg.freeze_plan = plan;
        cfg.shots = shots;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub variants: Vec<Variant>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
        }
    }
}

/// Everything needed to reproduce a run. The top-level `seed` is the master
/// seed: it overrides the corpus, initialisation, training and generation
/// seeds when the configuration is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// In-context references per query.
    #[serde(default = "default_shots")]
    pub shots: usize,
    pub freeze_plan: FreezePlan,
    #[serde(default = "default_encoder")]
    pub encoder: String,
    /// Save a checkpoint every this many steps (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub corpus: CorpusSection,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub gen: GenConfig,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default)]
    pub ablation: AblationConfig,
}

fn default_shots() -> usize {
    1
}

fn default_encoder() -> String {
    "synthetic".into()
}

fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty override key `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML, applies `key=value` overrides (dotted keys, TOML values;
    /// bare words are taken as strings), resolves seeds and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_dotted(&mut table, k.trim(), parse_override_value(v.trim()))?;
        }
        let mut cfg: RunConfig = table.try_into()?;
        cfg.resolve_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn resolve_seeds(&mut self) {
        self.corpus.synthetic.seed = self.seed;
        self.train.seed = self.seed;
        self.gen.seed = self.seed;
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        // Placeholder sizes; only structural compatibility is checked here.
        let probe = self.model.resolve(16, self.corpus.synthetic.visual_dim.max(1), self.seed);
        probe.validate()?;
        self.freeze_plan.validate(&probe)?;
        if self.freeze_plan.forces_zero_shot() && self.shots > 0 {
            return Err(Error::Plan {
                plan: self.freeze_plan.to_string(),
                reason: "this plan uses zero-shot templates; set shots = 0".into(),
            });
        }
        if !(0.0..1.0).contains(&self.corpus.test_fraction) {
            return Err(Error::Config("corpus.test_fraction must be in [0, 1)".into()));
        }
        self.gen.validate()?;
        if self.paths.raw_products.is_some() && self.paths.dictionaries.is_none() {
            return Err(Error::Config("paths.raw_products requires paths.dictionaries".into()));
        }
        Ok(())
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.paths.out_dir.join(stage)
    }
}

/// Provenance record written by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, usize>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn digests(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), file_digest(p)?)))
        .collect()
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T, what: &str) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::json(what, e))?;
    s.push('\n');
    Ok(s)
}

struct Stage<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    command: &'static str,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    counts: BTreeMap<String, usize>,
}

impl<'a> Stage<'a> {
    fn begin(cfg: &'a RunConfig, dir: PathBuf, command: &'static str) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_file(&dir.join("config.toml"), cfg.to_toml()?)?;
        Ok(Self {
            cfg,
            dir,
            command,
            inputs: Vec::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
        })
    }

    fn output(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_file(&path, contents)?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn finish(self) -> Result<RunManifest> {
        let inputs: Vec<&Path> = self.inputs.iter().map(PathBuf::as_path).collect();
        let outputs: Vec<&Path> = self.outputs.iter().map(PathBuf::as_path).collect();
        let manifest = RunManifest {
            command: self.command.into(),
            config_hash: self.cfg.hash()?,
            seed: self.cfg.seed,
            inputs: digests(&inputs)?,
            outputs: digests(&outputs)?,
            counts: self.counts,
        };
        write_file(&self.dir.join("manifest.json"), to_json(&manifest, "manifest")?)?;
        Ok(manifest)
    }
}

/// Deterministic per-category split; each category keeps at least one
/// training sample.
pub fn split_corpus(samples: &[Sample], test_fraction: Real, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let mut by_cat: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
    for s in samples {
        by_cat.entry(&s.category).or_default().push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut group) in by_cat {
        group.shuffle(&mut rng);
        let n_test = ((group.len() as Real * test_fraction).floor() as usize).min(group.len() - 1);
        let (t, tr) = group.split_at(n_test);
        test.extend(t.iter().map(|s| (*s).clone()));
        train.extend(tr.iter().map(|s| (*s).clone()));
    }
    train.sort_by(|a, b| a.id.cmp(&b.id));
    test.sort_by(|a, b| a.id.cmp(&b.id));
    (train, test)
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

/// Builds the corpus (synthetic, or from `paths.raw_products`), splits it
/// and writes `train.jsonl`, `test.jsonl` and the dictionaries.
pub fn build_corpus(cfg: &RunConfig) -> Result<RunManifest> {
    let mut inputs = Vec::new();
    let (out, dicts): (PipelineOutput, AttributeDictionaries) = match (&cfg.paths.raw_products, &cfg.paths.dictionaries) {
        (Some(raw), Some(dict_dir)) => {
            let dicts = AttributeDictionaries::load_dir(dict_dir)?;
            let text = fs::read_to_string(raw).map_err(|e| Error::io(raw, e))?;
            let products = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| serde_json::from_str::<RawProduct>(l).map_err(|e| Error::json(format!("raw product line {}", i + 1), e)))
                .collect::<Result<Vec<_>>>()?;
            inputs.push(raw.clone());
            inputs.extend(crate::corpus::DICTIONARY_FILES.iter().map(|f| dict_dir.join(f)));
            (run_pipeline(&products, &dicts, cfg.seed)?, dicts)
        }
        (None, _) => build_synthetic_corpus(&cfg.corpus.synthetic)?,
        (Some(_), None) => return Err(Error::Config("paths.raw_products requires paths.dictionaries".into())),
    };
    if out.samples.is_empty() {
        return Err(Error::Corpus("the pipeline retained no samples".into()));
    }
    let (train, test) = split_corpus(&out.samples, cfg.corpus.test_fraction, cfg.seed);
    let mut stage = Stage::begin(cfg, cfg.stage_dir("corpus"), "build-corpus")?;
    stage.inputs = inputs;
    let dict_dir = stage.dir.join("dictionaries");
    dicts.save_dir(&dict_dir)?;
    for f in crate::corpus::DICTIONARY_FILES {
        stage.outputs.push(dict_dir.join(f));
    }
    let train_path = stage.dir.join(TRAIN_FILE);
    write_corpus(&train_path, &train)?;
    let test_path = stage.dir.join(TEST_FILE);
    write_corpus(&test_path, &test)?;
    stage.outputs.extend([train_path, test_path]);
    stage.output("audits.json", to_json(&out.audits, "keyword audits")?)?;
    stage.counts.insert("retained".into(), out.samples.len());
    stage.counts.insert("dropped".into(), out.dropped.len());
    stage.counts.insert("train".into(), train.len());
    stage.counts.insert("test".into(), test.len());
    stage.finish()
}

fn encoder_for(cfg: &RunConfig, samples: &[Sample]) -> Result<Box<dyn ImageEncoder>> {
    let dim = samples
        .iter()
        .find_map(|s| s.image_feature.as_ref().map(Vec::len))
        .unwrap_or(cfg.corpus.synthetic.visual_dim);
    encoder_by_name(&cfg.encoder, dim, cfg.seed)
}

/// Writes the retrieval index of one category of a corpus file.
pub fn build_index_file(cfg: &RunConfig, corpus: &Path, category: &str) -> Result<(RunManifest, RetrievalIndex)> {
    let samples = read_corpus(corpus)?;
    let in_cat: Vec<Sample> = samples.iter().filter(|s| s.category == category).cloned().collect();
    if in_cat.is_empty() {
        return Err(Error::Retrieval(format!("no samples of category `{category}` in {}", corpus.display())));
    }
    let encoder = encoder_for(cfg, &samples)?;
    let index = build_index(&in_cat, category, encoder.as_ref())?;
    let mut stage = Stage::begin(cfg, cfg.stage_dir("index"), "build-index")?;
    stage.inputs.push(corpus.to_path_buf());
    stage.output(&format!("{category}.idx"), index.to_bytes())?;
    stage.counts.insert("pool".into(), index.len());
    Ok((stage.finish()?, index))
}

fn encode_all(instances: &[InContextInstance], vocab: &Vocabulary, cfg: &ModelConfig) -> Result<Vec<EncodedBatch>> {
    let ec = EncodeConfig::new(cfg.arch, cfg.visual_prefix_len, cfg.max_seq_len);
    instances.iter().map(|i| encode_instance(i, vocab, &ec)).collect()
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub manifest: RunManifest,
    pub first_step: usize,
    pub final_step: usize,
    pub final_loss: Option<Real>,
    pub trainable_params: usize,
    pub total_params: usize,
}

/// Trains on `train.jsonl` of `corpus_dir`. With `resume` and an existing
/// checkpoint in the stage directory, training continues from it.
pub fn train(cfg: &RunConfig, corpus_dir: &Path, stage_dir: &Path, resume: bool) -> Result<TrainSummary> {
    let train_path = corpus_dir.join(TRAIN_FILE);
    let samples = read_corpus(&train_path)?;
    let encoder = encoder_for(cfg, &samples)?;
    let pool = ReferencePool::new(&samples, encoder.as_ref())?;
    let instances = build_instances(&samples, &pool, encoder.as_ref(), cfg.shots, true)?;
    let vocab = build_vocabulary(&samples);
    let model_cfg = cfg.model.resolve(vocab.len(), encoder.dim(), cfg.seed);
    let batches = encode_all(&instances, &vocab, &model_cfg)?;
    cfg.train.validate(batches.len())?;

    let mut stage = Stage::begin(cfg, stage_dir.to_path_buf(), "train")?;
    stage.inputs.push(train_path);
    let ckpt_path = stage.dir.join(CHECKPOINT_FILE);
    let log_path = stage.dir.join(TRAIN_LOG_FILE);
    let resuming = resume && ckpt_path.exists();
    let mut trainer = if resuming {
        let ckpt = Checkpoint::load(&ckpt_path, Some(&config_hash(&model_cfg)))?;
        if ckpt.plan != cfg.freeze_plan {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with plan {}, config asks for {}",
                ckpt.plan, cfg.freeze_plan
            )));
        }
        Trainer::from_checkpoint(ckpt, cfg.train.clone())?
    } else {
        Trainer::new(ModictModel::new(model_cfg)?, cfg.freeze_plan, cfg.train.clone())?
    };
    let first_step = trainer.step;
    vocab.save(&stage.dir.join(VOCAB_FILE))?;

    let log_file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resuming)
        .truncate(!resuming)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    let every = cfg.checkpoint_every;
    let records = trainer.run(&batches, |t, rec| {
        write_log_record(&mut log, &rec)?;
        if every > 0 && rec.step % every == 0 {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            t.checkpoint().save(&ckpt_path)?;
        }
        Ok(())
    })?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    drop(log);
    trainer.checkpoint().save(&ckpt_path)?;
    stage.outputs.extend([ckpt_path, stage.dir.join(VOCAB_FILE), log_path]);
    stage.counts.insert("instances".into(), batches.len());
    stage.counts.insert("steps".into(), trainer.step);
    stage.counts.insert("trainable_params".into(), trainer.partition.trainable_count);
    stage.output("partition.json", to_json(&trainer.partition, "partition report")?)?;
    Ok(TrainSummary {
        first_step,
        final_step: trainer.step,
        final_loss: records.last().map(|r| r.loss),
        trainable_params: trainer.partition.trainable_count,
        total_params: trainer.partition.total_count,
        manifest: stage.finish()?,
    })
}

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REFERENCES_FILE: &str = "references.jsonl";
pub const PROVENANCE_FILE: &str = "provenance.jsonl";

/// Which training samples were shown as references for a test query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub id: String,
    pub reference_ids: Vec<String>,
}

/// Generates descriptions for `test.jsonl`, retrieving references from the
/// training split only.
pub fn generate(cfg: &RunConfig, corpus_dir: &Path, train_dir: &Path, stage_dir: &Path) -> Result<RunManifest> {
    let train_path = corpus_dir.join(TRAIN_FILE);
    let test_path = corpus_dir.join(TEST_FILE);
    let ckpt_path = train_dir.join(CHECKPOINT_FILE);
    let vocab_path = train_dir.join(VOCAB_FILE);
    let train_samples = read_corpus(&train_path)?;
    let test_samples = read_corpus(&test_path)?;
    if test_samples.is_empty() {
        return Err(Error::Corpus("test split is empty".into()));
    }
    let vocab = Vocabulary::load(&vocab_path)?;
    let ckpt = Checkpoint::load(&ckpt_path, None)?;
    if ckpt.plan != cfg.freeze_plan {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained with plan {}, config asks for {}",
            ckpt.plan, cfg.freeze_plan
        )));
    }
    let model = ModictModel::from_params(ckpt.model_config.clone(), ckpt.params)?;
    let encoder = encoder_for(cfg, &train_samples)?;
    let pool = ReferencePool::new(&train_samples, encoder.as_ref())?;
    let instances = build_instances(&test_samples, &pool, encoder.as_ref(), cfg.shots, false)?;
    let contexts = encode_all(&instances, &vocab, model.config())?;
    let outputs = generate_all(&model, &contexts, &cfg.gen)?;

    let predictions: Vec<TextRecord> = test_samples
        .iter()
        .zip(&outputs)
        .map(|(s, ids)| TextRecord {
            id: s.id.clone(),
            text: vocab.detokenize(ids),
        })
        .collect();
    let references: Vec<TextRecord> = test_samples
        .iter()
        .map(|s| TextRecord {
            id: s.id.clone(),
            text: s.description.clone(),
        })
        .collect();
    let mut provenance = String::new();
    for inst in &instances {
        let p = Provenance {
            id: inst.query.id.clone(),
            reference_ids: inst.references.iter().map(|r| r.id.clone()).collect(),
        };
        provenance.push_str(&serde_json::to_string(&p).map_err(|e| Error::json("provenance", e))?);
        provenance.push('\n');
    }
    let mut stage = Stage::begin(cfg, stage_dir.to_path_buf(), "generate")?;
    stage.inputs.extend([train_path, test_path, ckpt_path, vocab_path]);
    stage.output(PREDICTIONS_FILE, records_to_string(&predictions)?)?;
    stage.output(REFERENCES_FILE, records_to_string(&references)?)?;
    stage.output(PROVENANCE_FILE, provenance)?;
    stage.counts.insert("queries".into(), predictions.len());
    stage.finish()
}

pub fn read_provenance(path: &Path) -> Result<Vec<Provenance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json("provenance line", e)))
        .collect()
}

/// Scores a predictions file against a references file.
pub fn evaluate(cfg: &RunConfig, predictions: &Path, references: &Path, stage_dir: &Path) -> Result<MetricsReport> {
    let preds = read_records(predictions)?;
    let refs = read_records(references)?;
    let report = evaluate_run(&preds, &refs, &cfg.metrics)?;
    let mut stage = Stage::begin(cfg, stage_dir.to_path_buf(), "evaluate")?;
    stage.inputs.extend([predictions.to_path_buf(), references.to_path_buf()]);
    stage.output("report.json", to_json(&report, "metrics report")?)?;
    stage.output("report.txt", report.table())?;
    stage.counts.insert("pairs".into(), refs.len());
    stage.finish()?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub freeze_plan: FreezePlan,
    pub shots: usize,
    pub steps: usize,
    pub trainable_params: usize,
    pub report: MetricsReport,
}

/// Runs every configured variant with the same seed, corpus and budget and
/// writes `ablation.json` plus an aligned `ablation.txt` table.
pub fn ablate(base: &RunConfig) -> Result<Vec<AblationRow>> {
    let root = base.stage_dir("ablate");
    let mut corpus_cfg = base.clone();
    corpus_cfg.paths.out_dir = root.clone();
    build_corpus(&corpus_cfg)?;
    let corpus_dir = root.join("corpus");
    let mut rows = Vec::new();
    for &variant in &base.ablation.variants {
        let mut cfg = variant.apply(base);
        cfg.paths.out_dir = root.join(variant.dir_name());
        cfg.validate()?;
        let train_dir = cfg.stage_dir("train");
        let summary = train(&cfg, &corpus_dir, &train_dir, false)?;
        let gen_dir = cfg.stage_dir("generate");
        generate(&cfg, &corpus_dir, &train_dir, &gen_dir)?;
        let report = evaluate(
            &cfg,
            &gen_dir.join(PREDICTIONS_FILE),
            &gen_dir.join(REFERENCES_FILE),
            &cfg.stage_dir("evaluate"),
        )?;
        log::info!("{}: {:?}", variant.name(), report);
        rows.push(AblationRow {
            variant,
            freeze_plan: cfg.freeze_plan,
            shots: cfg.shots,
            steps: summary.final_step,
            trainable_params: summary.trainable_params,
            report,
        });
    }
    let named: Vec<(String, MetricsReport)> = rows.iter().map(|r| (r.variant.name().to_string(), r.report)).collect();
    let mut stage = Stage::begin(base, root, "ablate")?;
    stage.output("ablation.json", to_json(&rows, "ablation rows")?)?;
    stage.output("ablation.txt", format_table(&named))?;
    stage.counts.insert("variants".into(), rows.len());
    stage.finish()?;
    Ok(rows)
}
