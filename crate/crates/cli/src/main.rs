//! `mlm`: corpus, tokenizer, pretraining, fine-tuning, evaluation and
//! reporting stages of the encoder pipeline.
//!
//! Exit status is 0 on success, 2 on a usage or configuration error and 1 on
//! a runtime failure. Failures print one JSON line to stderr.

mod config;
mod manifest;
mod report;
mod stages;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Runtime,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl fmt::Display) -> Self {
        CliError {
            kind: ErrorKind::Usage,
            message: message.to_string(),
        }
    }

    pub fn runtime(message: impl fmt::Display) -> Self {
        CliError {
            kind: ErrorKind::Runtime,
            message: message.to_string(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Usage => 2,
            ErrorKind::Runtime => 1,
        }
    }

    fn line(&self) -> String {
        let kind = match self.kind {
            ErrorKind::Usage => "usage",
            ErrorKind::Runtime => "runtime",
        };
        let message = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        serde_json::json!({ "error": kind, "message": message }).to_string()
    }
}

impl From<mlm_core::Error> for CliError {
    fn from(e: mlm_core::Error) -> Self {
        match e {
            mlm_core::Error::Config(_) => CliError::usage(e),
            _ => CliError::runtime(e),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mlm", version, about = "Byte-level BPE tokenizer, masked-LM encoder pretraining and Turkish task evaluation")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build or synthesize a sharded corpus.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Train, apply or invert the BPE tokenizer.
    #[command(subcommand)]
    Tokenizer(TokenizerCmd),
    /// Masked-LM pretraining.
    Pretrain(PretrainArgs),
    /// Grid-searched fine-tuning on a downstream task.
    Finetune(FinetuneArgs),
    /// Minimal-pair acceptability or metric computation.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Aggregate run directories into result tables and curves.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    /// Filter, shuffle and shard JSONL records (`{"id","text","source"}`, optionally gzipped).
    Build {
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        shard_bytes: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a sharded corpus drawn from the built-in Turkish-like grammar.
    Synth {
        #[arg(long)]
        bytes: Option<usize>,
        #[arg(long)]
        shard_bytes: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic tagging task as train/dev/test token-tag files.
    SynthTask {
        #[arg(long, default_value_t = 200)]
        sentences: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic minimal pairs for every phenomenon as JSONL.
    SynthPairs {
        #[arg(long, default_value_t = 20)]
        per_phenomenon: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum TokenizerCmd {
    /// Learn merges from a corpus sample.
    Train {
        /// Corpus directory or its manifest.json.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        vocab_size: Option<usize>,
        /// Bytes of documents to sample; defaults to the whole corpus.
        #[arg(long)]
        sample_bytes: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print token ids, one line per input line (stdin unless --text).
    Encode {
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        text: Option<String>,
        /// Wrap in <s> ... </s>.
        #[arg(long)]
        specials: bool,
    },
    /// Print the text of a token id sequence.
    Decode {
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(required = true)]
        ids: Vec<u32>,
    },
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// toy, base or large.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub tokens_per_update: Option<u64>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub valid_fraction: Option<f64>,
    #[arg(long)]
    pub evals_per_epoch: Option<usize>,
    #[arg(long)]
    pub max_valid_blocks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// pos, ner or offense.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Directory with train*, dev* (optional) and test* files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `base`, `large` or a TOML file holding a grid.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `tokenizer/` beside the checkpoint.
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub batch_sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub learning_rates: Option<Vec<f64>>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    /// Row label in reports; defaults to the checkpoint's directory name.
    #[arg(long)]
    pub model_name: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Pseudo-log-likelihood accuracy on minimal pairs.
    Turblimp {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Output CSV file, or a directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tokenizer: Option<PathBuf>,
        #[arg(long)]
        length_normalize: bool,
        /// skip or error.
        #[arg(long)]
        overlength: Option<String>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        model_name: Option<String>,
    },
    /// Score a prediction file against gold labels.
    Metrics {
        /// pos, ner or offense.
        #[arg(long)]
        task: String,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories; searched recursively for run manifests.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::usage(first.trim_start_matches("error: "));
            eprintln!("{}", err.line());
            return ExitCode::from(err.exit_code());
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match stages::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.line());
            ExitCode::from(err.exit_code())
        }
    }
}
