//! `modict`: run the corpus, index, training, generation, evaluation and
//! ablation stages from a TOML run configuration.
//!
//! Failures exit nonzero and print one JSON object to stderr:
//! `{"error": "<kind>", "message": "..."}`. Configuration problems exit with
//! 2, everything else with 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use modict::experiment::{self, RunConfig, PREDICTIONS_FILE, REFERENCES_FILE, TRAIN_FILE};
use modict::Error;

#[derive(Parser)]
#[command(name = "modict", version, about = "Multimodal in-context tuning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set train.lr_peak=3e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the corpus and its train/test split.
    BuildCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Build the retrieval index of one category.
    BuildIndex {
        #[command(flatten)]
        common: Common,
        /// Corpus file [default: <out_dir>/corpus/train.jsonl].
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        category: String,
    },
    /// Train a model on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory with train.jsonl [default: <out_dir>/corpus].
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
        /// Continue from the checkpoint in the training directory.
        #[arg(long)]
        resume: bool,
    },
    /// Generate descriptions for the test split.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
        /// Directory with checkpoint.bin and vocab.txt [default: <out_dir>/train].
        #[arg(long)]
        train_dir: Option<PathBuf>,
    },
    /// Score predictions against references.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// [default: <out_dir>/generate/predictions.jsonl]
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// [default: <out_dir>/generate/references.jsonl]
        #[arg(long)]
        references: Option<PathBuf>,
    },
    /// Train, generate and evaluate every ablation variant.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    RunConfig::load(&common.config, &common.overrides)
}

fn print_json(value: &impl serde::Serialize) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(format!("cannot print result: {e}")))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::BuildCorpus { common } => {
            let cfg = load(&common)?;
            print_json(&experiment::build_corpus(&cfg)?)
        }
        Command::BuildIndex {
            common,
            corpus,
            category,
        } => {
            let cfg = load(&common)?;
            let corpus = corpus.unwrap_or_else(|| cfg.stage_dir("corpus").join(TRAIN_FILE));
            let (manifest, _) = experiment::build_index_file(&cfg, &corpus, &category)?;
            print_json(&manifest)
        }
        Command::Train {
            common,
            corpus_dir,
            resume,
        } => {
            let cfg = load(&common)?;
            let corpus_dir = corpus_dir.unwrap_or_else(|| cfg.stage_dir("corpus"));
            print_json(&experiment::train(&cfg, &corpus_dir, &cfg.stage_dir("train"), resume)?)
        }
        Command::Generate {
            common,
            corpus_dir,
            train_dir,
        } => {
            let cfg = load(&common)?;
            let corpus_dir = corpus_dir.unwrap_or_else(|| cfg.stage_dir("corpus"));
            let train_dir = train_dir.unwrap_or_else(|| cfg.stage_dir("train"));
            print_json(&experiment::generate(&cfg, &corpus_dir, &train_dir, &cfg.stage_dir("generate"))?)
        }
        Command::Evaluate {
            common,
            predictions,
            references,
        } => {
            let cfg = load(&common)?;
            let gen = cfg.stage_dir("generate");
            let predictions = predictions.unwrap_or_else(|| gen.join(PREDICTIONS_FILE));
            let references = references.unwrap_or_else(|| gen.join(REFERENCES_FILE));
            let report = experiment::evaluate(&cfg, &predictions, &references, &cfg.stage_dir("evaluate"))?;
            print!("{}", report.table());
            Ok(())
        }
        Command::Ablate { common } => {
            let cfg = load(&common)?;
            let rows = experiment::ablate(&cfg)?;
            let table: Vec<(String, _)> = rows.iter().map(|r| (r.variant.name().to_string(), r.report)).collect();
            print!("{}", modict::metrics::format_table(&table));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let diag = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{diag}");
            match e {
                Error::Config(_) | Error::Toml(_) | Error::Plan { .. } | Error::UnknownEncoder(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
