//! Stage implementations behind each subcommand.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use mlm_core::bpe::{self, BpeVocab, SpecialTokens};
use mlm_core::corpus::{self, FilterStats};
use mlm_core::encoder::{Checkpoint, ModelConfig};
use mlm_core::evalx::{self, MetricReport, OverlengthPolicy, PllOptions, PllScorer};
use mlm_core::finetune::{self, Dataset, GridSpec, LabeledSequence, LabeledText, TaskKind, TaskSpec};
use mlm_core::pretrain::{self, PretrainConfig, PretrainData};
use mlm_core::synth;
use serde::Serialize;

use crate::config::{pick, RunConfig};
use crate::manifest::ManifestBuilder;
use crate::report;
use crate::{Cli, CliError, Command, CorpusCmd, EvalCmd, FinetuneArgs, PretrainArgs, TokenizerCmd};

/// Sub-directory of a pretraining run holding its tokenizer.
pub const TOKENIZER_DIR: &str = "tokenizer";
pub const FINETUNED_CHECKPOINT: &str = "model.ckpt";
pub const TRIALS_CSV: &str = "trials.csv";
pub const TURBLIMP_CSV: &str = "turblimp.csv";
pub const TURBLIMP_JSON: &str = "turblimp_report.json";

const DEFAULT_SHARD_BYTES: u64 = 64 << 20;
const DEFAULT_SYNTH_BYTES: usize = 5_000_000;
const DEFAULT_VOCAB_SIZE: usize = 4096;
const DEFAULT_VALID_FRACTION: f64 = 0.02;

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = pick(cli.seed, cfg.seed, 1);
    match cli.command {
        Command::Corpus(cmd) => corpus_cmd(cmd, &cfg, seed),
        Command::Tokenizer(cmd) => tokenizer_cmd(cmd, &cfg, seed),
        Command::Pretrain(args) => pretrain_cmd(args, &cfg, seed),
        Command::Finetune(args) => finetune_cmd(args, &cfg, cli.seed),
        Command::Eval(cmd) => eval_cmd(cmd, &cfg, seed),
        Command::Report(args) => report::run(&args.runs, &args.out),
    }
}

fn require_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} {} does not exist", path.display())))
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn dir_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

#[derive(Serialize)]
struct CorpusResolved {
    inputs: Vec<PathBuf>,
    shard_bytes: u64,
    synth_bytes: Option<usize>,
}

fn corpus_cmd(cmd: CorpusCmd, cfg: &RunConfig, seed: u64) -> Result<(), CliError> {
    match cmd {
        CorpusCmd::Build { input, shard_bytes, out } => {
            let inputs = if input.is_empty() {
                cfg.corpus.input.clone().unwrap_or_default()
            } else {
                input
            };
            if inputs.is_empty() {
                return Err(CliError::usage("corpus build needs at least one --input file"));
            }
            for p in &inputs {
                require_exists(p, "input")?;
            }
            let shard_bytes = pick(shard_bytes, cfg.corpus.shard_bytes, DEFAULT_SHARD_BYTES);
            let mut m = ManifestBuilder::start("corpus", seed);
            m.config(&CorpusResolved {
                inputs: inputs.clone(),
                shard_bytes,
                synth_bytes: None,
            })?;
            let (docs, stats) = corpus::ingest_files(&inputs)?;
            let manifest = corpus::shuffle_and_shard(docs, seed, shard_bytes, stats, &out)?;
            for (i, p) in inputs.iter().enumerate() {
                m.input(&format!("input{i}"), p);
            }
            m.output("manifest", &out.join(corpus::MANIFEST_FILE));
            m.result(&manifest)?;
            m.finish(&out)?;
            Ok(())
        }
        CorpusCmd::Synth { bytes, shard_bytes, out } => {
            let bytes = pick(bytes, cfg.corpus.synth_bytes, DEFAULT_SYNTH_BYTES);
            let shard_bytes = pick(shard_bytes, cfg.corpus.shard_bytes, DEFAULT_SHARD_BYTES);
            let mut m = ManifestBuilder::start("corpus", seed);
            m.config(&CorpusResolved {
                inputs: Vec::new(),
                shard_bytes,
                synth_bytes: Some(bytes),
            })?;
            let docs = synth::grammar_corpus(seed, bytes);
            let stats = FilterStats {
                kept: docs.len() as u64,
                dropped_invalid_encoding: 0,
            };
            let manifest = corpus::shuffle_and_shard(docs, seed, shard_bytes, stats, &out)?;
            m.output("manifest", &out.join(corpus::MANIFEST_FILE));
            m.result(&manifest)?;
            m.finish(&out)?;
            Ok(())
        }
        CorpusCmd::SynthTask { sentences, out } => {
            if sentences < 10 {
                return Err(CliError::usage("--sentences must be at least 10"));
            }
            create_dir(&out)?;
            let all: Vec<LabeledSequence> = synth::tagging_task(seed, sentences)
                .into_iter()
                .map(|s| LabeledSequence {
                    words: s.words,
                    labels: s.tags,
                })
                .collect();
            let n_dev = sentences / 10;
            let n_train = sentences - 2 * n_dev;
            let mut m = ManifestBuilder::start("corpus", seed);
            m.config(&serde_json::json!({ "sentences": sentences }))?;
            for (name, part) in [
                ("train.txt", &all[..n_train]),
                ("dev.txt", &all[n_train..n_train + n_dev]),
                ("test.txt", &all[n_train + n_dev..]),
            ] {
                let path = out.join(name);
                finetune::write_token_file(&path, part)?;
                m.output(name, &path);
            }
            m.finish(&out)?;
            Ok(())
        }
        CorpusCmd::SynthPairs { per_phenomenon, out } => {
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            evalx::write_pairs(&out, &synth::minimal_pairs(seed, per_phenomenon))?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct TokenizerResolved {
    input: PathBuf,
    vocab_size: usize,
    sample_bytes: u64,
}

fn tokenizer_cmd(cmd: TokenizerCmd, cfg: &RunConfig, seed: u64) -> Result<(), CliError> {
    match cmd {
        TokenizerCmd::Train {
            input,
            vocab_size,
            sample_bytes,
            out,
        } => {
            let input = input
                .or_else(|| cfg.tokenizer.input.clone())
                .ok_or_else(|| CliError::usage("tokenizer train needs --input"))?;
            require_exists(&input, "corpus")?;
            let vocab_size = pick(vocab_size, cfg.tokenizer.vocab_size, DEFAULT_VOCAB_SIZE);
            let (_, docs) = corpus::load_corpus(&input)?;
            let total: u64 = docs.iter().map(|d| d.byte_len() as u64).sum();
            let sample_bytes = pick(sample_bytes, cfg.tokenizer.sample_bytes, total);
            let mut m = ManifestBuilder::start("tokenizer", seed);
            m.config(&TokenizerResolved {
                input: input.clone(),
                vocab_size,
                sample_bytes,
            })?;
            let sample = corpus::sample_for_vocab(&docs, sample_bytes, seed)?;
            let vocab = bpe::train_vocab(&sample, vocab_size, SpecialTokens::default())?;
            vocab.save(&out)?;
            m.input("corpus", &input);
            m.output("vocab", &out.join(bpe::VOCAB_FILE));
            m.output("merges", &out.join(bpe::MERGES_FILE));
            m.result(&serde_json::json!({ "vocab_size": vocab.len(), "merges": vocab.merges().len() }))?;
            m.finish(&out)?;
            Ok(())
        }
        TokenizerCmd::Encode {
            tokenizer,
            text,
            specials,
        } => {
            require_exists(&tokenizer, "tokenizer")?;
            let vocab = BpeVocab::load(&tokenizer)?;
            let lines: Vec<String> = match text {
                Some(t) => vec![t],
                None => std::io::stdin()
                    .lock()
                    .lines()
                    .collect::<Result<_, _>>()
                    .map_err(|e| CliError::runtime(format!("cannot read stdin: {e}")))?,
            };
            let mut stdout = std::io::stdout().lock();
            for line in lines {
                let ids = vocab.encode(line.as_bytes(), specials).ids;
                let text: Vec<String> = ids.iter().map(u32::to_string).collect();
                writeln!(stdout, "{}", text.join(" ")).map_err(CliError::runtime)?;
            }
            Ok(())
        }
        TokenizerCmd::Decode { tokenizer, ids } => {
            require_exists(&tokenizer, "tokenizer")?;
            let vocab = BpeVocab::load(&tokenizer)?;
            let bytes = vocab.decode(&ids)?;
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(&bytes).map_err(CliError::runtime)?;
            writeln!(stdout).map_err(CliError::runtime)?;
            Ok(())
        }
    }
}

fn pretrain_config(args: &PretrainArgs, cfg: &RunConfig, vocab_size: usize, seed: u64) -> Result<PretrainConfig, CliError> {
    let file = &cfg.pretrain;
    let preset = pick(args.preset.clone(), file.preset.clone(), "toy".into());
    let mut pc = match preset.as_str() {
        "toy" => PretrainConfig::toy(vocab_size, seed),
        "base" => PretrainConfig::base(vocab_size, seed),
        "large" => PretrainConfig::large(vocab_size, seed),
        other => return Err(CliError::usage(format!("unknown preset {other:?}; expected toy, base or large"))),
    };
    let m = &mut pc.model;
    m.num_layers = pick(args.layers, file.layers, m.num_layers);
    m.hidden_size = pick(args.hidden, file.hidden, m.hidden_size);
    m.num_heads = pick(args.heads, file.heads, m.num_heads);
    m.ffn_size = pick(args.ffn, file.ffn, m.ffn_size);
    m.max_positions = pick(None, file.max_positions, m.max_positions);
    m.dropout = pick(args.dropout, file.dropout, m.dropout);
    m.attention_dropout = pick(args.dropout, file.dropout, m.attention_dropout);
    let s = &mut pc.schedule;
    s.total_updates = pick(args.steps, file.steps, s.total_updates);
    let default_warmup = if args.steps.or(file.steps).is_some() {
        s.total_updates / 10
    } else {
        s.warmup_updates
    };
    s.warmup_updates = pick(args.warmup, file.warmup, default_warmup);
    s.peak_lr = pick(args.lr, file.lr, s.peak_lr);
    s.end_lr = pick(None, file.end_lr, s.end_lr);
    s.power = pick(None, file.power, s.power);
    pc.seq_len = pick(args.seq_len, file.seq_len, pc.seq_len);
    pc.model.max_positions = pc.model.max_positions.max(pc.seq_len);
    let default_tokens = if args.seq_len.or(file.seq_len).is_some() {
        (pc.sequences_per_update() * pc.seq_len) as u64
    } else {
        pc.schedule.tokens_per_update
    };
    pc.schedule.tokens_per_update = pick(args.tokens_per_update, file.tokens_per_update, default_tokens);
    pc.micro_batch = pick(args.micro_batch, file.micro_batch, pc.micro_batch);
    pc.evals_per_epoch = pick(args.evals_per_epoch, file.evals_per_epoch, pc.evals_per_epoch);
    pc.max_valid_blocks = args.max_valid_blocks.or(file.max_valid_blocks).or(pc.max_valid_blocks);
    pc.log_every = pick(None, file.log_every, pc.log_every);
    pc.validate()?;
    Ok(pc)
}

fn copy_tokenizer(from: &Path, to: &Path) -> Result<(), CliError> {
    create_dir(to)?;
    for name in [bpe::VOCAB_FILE, bpe::MERGES_FILE] {
        let src = from.join(name);
        fs::copy(&src, to.join(name)).map_err(|e| CliError::runtime(format!("cannot copy {}: {e}", src.display())))?;
    }
    Ok(())
}

fn pretrain_cmd(args: PretrainArgs, cfg: &RunConfig, seed: u64) -> Result<(), CliError> {
    let corpus_dir = args
        .corpus
        .clone()
        .or_else(|| cfg.pretrain.corpus.clone())
        .ok_or_else(|| CliError::usage("pretrain needs --corpus"))?;
    let tok_dir = args
        .tokenizer
        .clone()
        .or_else(|| cfg.pretrain.tokenizer.clone())
        .ok_or_else(|| CliError::usage("pretrain needs --tokenizer"))?;
    require_exists(&corpus_dir, "corpus")?;
    require_exists(&tok_dir, "tokenizer")?;
    if let Some(r) = &args.resume {
        require_exists(r, "checkpoint")?;
    }
    let vocab = BpeVocab::load(&tok_dir)?;
    let pc = pretrain_config(&args, cfg, vocab.len(), seed)?;
    let valid_fraction = pick(args.valid_fraction, cfg.pretrain.valid_fraction, DEFAULT_VALID_FRACTION);
    let mut m = ManifestBuilder::start("pretrain", seed);
    m.config(&serde_json::json!({ "pretrain": &pc, "valid_fraction": valid_fraction }))?;
    m.model(&dir_name(&args.out));
    m.input("corpus", &corpus_dir);
    m.input("tokenizer", &tok_dir);

    let (_, docs) = corpus::load_corpus(&corpus_dir)?;
    let (train_docs, valid_docs) = corpus::split_validation(docs, valid_fraction, seed)?;
    let data = PretrainData::prepare(&vocab, pc.seq_len, &train_docs, &valid_docs)?;
    let resume = match &args.resume {
        Some(p) => {
            m.input("resume", p);
            Some(Checkpoint::load(p)?)
        }
        None => None,
    };
    create_dir(&args.out)?;
    copy_tokenizer(&tok_dir, &args.out.join(TOKENIZER_DIR))?;
    let out = pretrain::train(&pc, &vocab, &data, &args.out, resume.as_ref())?;
    m.output("checkpoint", &out.final_checkpoint);
    m.output("log_dir", &args.out);
    m.output("tokenizer", &args.out.join(TOKENIZER_DIR));
    m.result(&serde_json::json!({
        "train_blocks": data.train.len(),
        "valid_blocks": data.valid.len(),
        "skipped_steps": out.skipped_steps,
        "first_train_ppl": out.log.train_points.first().map(|p| p.1),
        "final_train_ppl": out.log.train_points.last().map(|p| p.1),
        "initial_valid_ppl": out.log.valid_points.first().map(|p| p.1),
        "final_valid_ppl": out.log.valid_points.last().map(|p| p.1),
    }))?;
    m.finish(&args.out)?;
    Ok(())
}

/// Files in `dir` whose names start with `prefix`, sorted.
fn split_files(dir: &Path, prefixes: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| CliError::usage(format!("cannot read {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(CliError::runtime)?.path();
        let name = dir_name(&path);
        if path.is_file() && prefixes.iter().any(|p| name.starts_with(p)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn load_split(files: &[PathBuf], kind: TaskKind, labels: Option<&[String]>) -> Result<Option<Dataset>, CliError> {
    let mut merged: Option<Dataset> = None;
    for f in files {
        let ds = finetune::load_dataset(f, kind, labels)?;
        merged = Some(match (merged, ds) {
            (None, ds) => ds,
            (Some(Dataset::Tokens(mut a)), Dataset::Tokens(b)) => {
                a.extend(b);
                Dataset::Tokens(a)
            }
            (Some(Dataset::Texts(mut a)), Dataset::Texts(b)) => {
                a.extend(b);
                Dataset::Texts(a)
            }
            _ => unreachable!("one task kind per load"),
        });
    }
    Ok(merged)
}

fn task_kind(name: &str) -> Result<TaskKind, CliError> {
    match name {
        "pos" => Ok(TaskKind::TokenTagging),
        "ner" => Ok(TaskKind::SpanNer),
        "offense" => Ok(TaskKind::SequenceClassification),
        other => Err(CliError::usage(format!("unknown task {other:?}; expected pos, ner or offense"))),
    }
}

fn load_task(name: &str, data: &Path, labels: Option<Vec<String>>, seed: u64) -> Result<TaskSpec, CliError> {
    let kind = task_kind(name)?;
    let given = labels.or_else(|| (kind == TaskKind::SequenceClassification).then(|| vec!["NOT".into(), "OFF".into()]));
    let train_files = split_files(data, &["train"])?;
    let dev_files = split_files(data, &["dev", "valid"])?;
    let test_files = split_files(data, &["test"])?;
    if train_files.is_empty() || test_files.is_empty() {
        return Err(CliError::usage(format!("{} needs train* and test* files", data.display())));
    }
    let train = load_split(&train_files, kind, given.as_deref())?.expect("train files present");
    let test = load_split(&test_files, kind, given.as_deref())?.expect("test files present");
    let (train, dev) = match load_split(&dev_files, kind, given.as_deref())? {
        Some(dev) => (train, dev),
        None => {
            log::info!("no dev split in {}; holding out 10% of train", data.display());
            train.holdout(0.1, seed)?
        }
    };
    let label_set = match given {
        Some(l) => l,
        None => {
            let mut all = train.labels();
            all.extend(dev.labels());
            all.extend(test.labels());
            if kind == TaskKind::SpanNer {
                all.insert(evalx::OUTSIDE_TAG.to_string());
            }
            all.into_iter().collect()
        }
    };
    let spec = TaskSpec {
        name: name.to_string(),
        kind,
        label_set,
        train,
        dev,
        test,
    };
    spec.validate()?;
    Ok(spec)
}

fn grid_spec(args: &FinetuneArgs, cfg: &RunConfig, seed: Option<u64>) -> Result<GridSpec, CliError> {
    let file = &cfg.finetune;
    let source = pick(args.grid.clone(), file.preset.clone(), "base".into());
    let mut grid = match source.as_str() {
        "base" => GridSpec::base(),
        "large" => GridSpec::large(),
        path => {
            let p = Path::new(path);
            require_exists(p, "grid config")?;
            let text = fs::read_to_string(p).map_err(|e| CliError::usage(format!("cannot read {path}: {e}")))?;
            toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid grid {path}: {}", e.message())))?
        }
    };
    grid.batch_sizes = pick(args.batch_sizes.clone(), file.batch_sizes.clone(), grid.batch_sizes);
    grid.learning_rates = pick(args.learning_rates.clone(), file.learning_rates.clone(), grid.learning_rates);
    grid.max_epochs = pick(args.max_epochs, file.max_epochs, grid.max_epochs);
    grid.patience = pick(args.patience, file.patience, grid.patience);
    grid.warmup_fraction = pick(args.warmup_fraction, file.warmup_fraction, grid.warmup_fraction);
    grid.seed = pick(seed, cfg.seed, grid.seed);
    grid.validate()?;
    Ok(grid)
}

fn resolve_tokenizer(flag: Option<PathBuf>, file: Option<PathBuf>, ckpt: &Path) -> Result<PathBuf, CliError> {
    let dir = flag.or(file).unwrap_or_else(|| {
        ckpt.parent()
            .unwrap_or_else(|| Path::new("."))
            .join(TOKENIZER_DIR)
    });
    require_exists(&dir, "tokenizer")?;
    Ok(dir)
}

fn model_name(flag: Option<String>, file: Option<String>, ckpt: &Path) -> String {
    flag.or(file).unwrap_or_else(|| {
        let parent = ckpt.parent().filter(|p| !p.as_os_str().is_empty());
        parent.map_or_else(|| "model".into(), dir_name)
    })
}

/// Per-trial outcomes. Wall-clock times stay in the manifest so that reruns
/// produce identical files.
fn trials_csv(task: &str, outcome: &finetune::GridOutcome) -> String {
    let mut s = String::from("task,batch_size,learning_rate,status,epochs_run,best_epoch,best_dev_score,test_score\n");
    for r in &outcome.records {
        let c = r.config;
        match &r.result {
            Some(t) => s.push_str(&format!(
                "{task},{},{:e},ok,{},{},{:.2},{:.2}\n",
                c.batch_size,
                c.learning_rate,
                t.epochs_run,
                t.best_epoch,
                evalx::round2(t.best_dev_score),
                evalx::round2(t.test_score)
            )),
            None => s.push_str(&format!("{task},{},{:e},failed,,,,\n", c.batch_size, c.learning_rate)),
        }
    }
    s
}

fn finetune_cmd(args: FinetuneArgs, cfg: &RunConfig, seed_flag: Option<u64>) -> Result<(), CliError> {
    let file = &cfg.finetune;
    let task_name = args
        .task
        .clone()
        .or_else(|| file.task.clone())
        .ok_or_else(|| CliError::usage("finetune needs --task"))?;
    task_kind(&task_name)?;
    let ckpt_path = args
        .ckpt
        .clone()
        .or_else(|| file.ckpt.clone())
        .ok_or_else(|| CliError::usage("finetune needs --ckpt"))?;
    let data_dir = args
        .data
        .clone()
        .or_else(|| file.data.clone())
        .ok_or_else(|| CliError::usage("finetune needs --data"))?;
    require_exists(&ckpt_path, "checkpoint")?;
    require_exists(&data_dir, "data directory")?;
    let tok_dir = resolve_tokenizer(args.tokenizer.clone(), file.tokenizer.clone(), &ckpt_path)?;
    let grid = grid_spec(&args, cfg, seed_flag)?;
    let model = model_name(args.model_name.clone(), file.model_name.clone(), &ckpt_path);
    let task = load_task(&task_name, &data_dir, args.labels.clone().or_else(|| file.labels.clone()), grid.seed)?;

    let mut m = ManifestBuilder::start("finetune", grid.seed);
    m.config(&serde_json::json!({ "grid": &grid, "labels": &task.label_set }))?;
    m.model(&model);
    m.task(&task_name);
    m.input("checkpoint", &ckpt_path);
    m.input("data", &data_dir);
    m.input("tokenizer", &tok_dir);

    let vocab = BpeVocab::load(&tok_dir)?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let params = ckpt.encoder_params()?;
    let outcome = finetune::run_grid(&ckpt.config, &params, &vocab, &task, &grid)?;
    let best = &outcome.best;

    create_dir(&args.out)?;
    let trials_path = args.out.join(TRIALS_CSV);
    write_text(&trials_path, &trials_csv(&task_name, &outcome))?;
    let mut saved = Checkpoint::new(&ckpt.config, &best.params, Some(&best.head), ckpt.step);
    saved.metadata.insert("kind".into(), "finetune".into());
    saved.metadata.insert("task".into(), task_name.clone());
    saved.metadata.insert("labels".into(), serde_json::to_string(&task.label_set).map_err(CliError::runtime)?);
    let model_path = args.out.join(FINETUNED_CHECKPOINT);
    saved.save(&model_path)?;

    let preds = finetune::predict(&ckpt.config, &best.params, &best.head, &vocab, &task, &task.test)?;
    let pred_path = args.out.join(match task.test {
        Dataset::Tokens(_) => "test_predictions.txt",
        Dataset::Texts(_) => "test_predictions.tsv",
    });
    match &task.test {
        Dataset::Tokens(gold) => {
            let rows: Vec<LabeledSequence> = gold
                .iter()
                .zip(preds)
                .map(|(g, p)| LabeledSequence {
                    words: g.words.clone(),
                    labels: p,
                })
                .collect();
            finetune::write_token_file(&pred_path, &rows)?;
        }
        Dataset::Texts(gold) => {
            let rows: Vec<LabeledText> = gold
                .iter()
                .zip(preds)
                .map(|(g, p)| LabeledText {
                    label: p[0].clone(),
                    ..g.clone()
                })
                .collect();
            finetune::write_text_file(&pred_path, &rows)?;
        }
    }
    m.output("trials", &trials_path);
    m.output("checkpoint", &model_path);
    m.output("test_predictions", &pred_path);
    m.result(&serde_json::json!({
        "best": &best.result,
        "trials": &outcome.records,
        "grid_wall_clock_seconds": outcome.wall_clock_seconds,
    }))?;
    m.finish(&args.out)?;
    Ok(())
}

/// Table-5-shaped CSV for one model.
pub fn turblimp_row_csv(model: &str, report: &MetricReport) -> Result<String, CliError> {
    let (header, row) = report::turblimp_row(model, report);
    report::csv_string(&header, &[row])
}

/// `--out` may name the primary output file (by extension) or a directory.
/// Returns the directory and the primary file path.
fn file_or_dir(out: &Path, ext: &str, default_name: &str) -> Result<(PathBuf, PathBuf), CliError> {
    if out.extension().is_some_and(|e| e == ext) {
        let dir = out
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        create_dir(&dir)?;
        Ok((dir, out.to_path_buf()))
    } else {
        create_dir(out)?;
        Ok((out.to_path_buf(), out.join(default_name)))
    }
}

fn eval_cmd(cmd: EvalCmd, cfg: &RunConfig, seed: u64) -> Result<(), CliError> {
    match cmd {
        EvalCmd::Turblimp {
            ckpt,
            pairs,
            out,
            tokenizer,
            length_normalize,
            overlength,
            batch_size,
            model_name: name,
        } => {
            require_exists(&ckpt, "checkpoint")?;
            require_exists(&pairs, "pairs file")?;
            let tok_dir = resolve_tokenizer(tokenizer, None, &ckpt)?;
            let overlength = match pick(overlength, cfg.eval.overlength.clone(), "skip".into()).as_str() {
                "skip" => OverlengthPolicy::Skip,
                "error" => OverlengthPolicy::Error,
                other => return Err(CliError::usage(format!("--overlength must be skip or error, got {other:?}"))),
            };
            let options = PllOptions {
                length_normalize: length_normalize || cfg.eval.length_normalize.unwrap_or(false),
                overlength,
                batch_size: pick(batch_size, cfg.eval.batch_size, PllOptions::default().batch_size),
            };
            let model = model_name(name, None, &ckpt);
            let (dir, csv_path) = file_or_dir(&out, "csv", TURBLIMP_CSV)?;
            let mut m = ManifestBuilder::start("eval", seed);
            m.config(&options)?;
            m.model(&model);
            m.task("turblimp");
            m.input("checkpoint", &ckpt);
            m.input("pairs", &pairs);

            let vocab = BpeVocab::load(&tok_dir)?;
            let checkpoint = Checkpoint::load(&ckpt)?;
            let params = checkpoint.encoder_params()?;
            let config: ModelConfig = checkpoint.config.clone();
            let pairs_list = evalx::read_pairs(&pairs)?;
            let scorer = PllScorer {
                params: &params,
                config: &config,
                vocab: &vocab,
                options,
            };
            let report = evalx::turblimp_eval(&scorer, &pairs_list, overlength)?;
            write_text(&csv_path, &turblimp_row_csv(&model, &report)?)?;
            let json_path = csv_path.with_file_name(TURBLIMP_JSON);
            write_text(&json_path, &(serde_json::to_string_pretty(&report).map_err(CliError::runtime)? + "\n"))?;
            m.output("table", &csv_path);
            m.output("report", &json_path);
            m.result(&report)?;
            m.finish(&dir)?;
            Ok(())
        }
        EvalCmd::Metrics {
            task,
            gold,
            pred,
            labels,
            out,
        } => {
            let kind = task_kind(&task)?;
            require_exists(&gold, "gold file")?;
            require_exists(&pred, "prediction file")?;
            let given = labels.or_else(|| (kind == TaskKind::SequenceClassification).then(|| vec!["NOT".into(), "OFF".into()]));
            let g = finetune::load_dataset(&gold, kind, given.as_deref())?;
            let p = finetune::load_dataset(&pred, kind, given.as_deref())?;
            let report = metric_report(&task, kind, &g, &p, given.as_deref())?;
            let (dir, json_path) = file_or_dir(&out, "json", "metrics.json")?;
            let text = serde_json::to_string_pretty(&report).map_err(CliError::runtime)?;
            write_text(&json_path, &(text.clone() + "\n"))?;
            println!("{}", serde_json::to_string(&report).map_err(CliError::runtime)?);
            let mut m = ManifestBuilder::start("eval", seed);
            m.config(&serde_json::json!({ "task": &task }))?;
            m.task(&task);
            m.input("gold", &gold);
            m.input("pred", &pred);
            m.output("report", &json_path);
            m.result(&report)?;
            m.finish(&dir)?;
            Ok(())
        }
    }
}

fn metric_report(
    task: &str,
    kind: TaskKind,
    gold: &Dataset,
    pred: &Dataset,
    labels: Option<&[String]>,
) -> Result<MetricReport, CliError> {
    let mut report = MetricReport {
        task: task.to_string(),
        metric: String::new(),
        primary_score: 0.0,
        breakdown: Default::default(),
        support: Default::default(),
        skipped: 0,
    };
    match (gold, pred) {
        (Dataset::Tokens(g), Dataset::Tokens(p)) => {
            for (i, (a, b)) in g.iter().zip(p).enumerate() {
                if a.words != b.words {
                    return Err(CliError::runtime(format!("sentence {} differs between gold and prediction", i + 1)));
                }
            }
            let gl: Vec<Vec<String>> = g.iter().map(|s| s.labels.clone()).collect();
            let pl: Vec<Vec<String>> = p.iter().map(|s| s.labels.clone()).collect();
            if kind == TaskKind::SpanNer {
                report.metric = "entity_f1".into();
                report.primary_score = evalx::entity_f1(&gl, &pl)?;
            } else {
                report.metric = "micro_f1".into();
                report.primary_score = evalx::micro_f1(&gl, &pl)?;
                let (scores, support) = evalx::per_tag_f1(&gl, &pl)?;
                report.breakdown = scores;
                report.support = support;
            }
        }
        (Dataset::Texts(g), Dataset::Texts(p)) => {
            if g.len() != p.len() || g.iter().zip(p).any(|(a, b)| a.id != b.id) {
                return Err(CliError::runtime("gold and prediction ids do not line up"));
            }
            let labels = labels.expect("classification labels are always given");
            let gl: Vec<&str> = g.iter().map(|t| t.label.as_str()).collect();
            let pl: Vec<&str> = p.iter().map(|t| t.label.as_str()).collect();
            let (score, scores, support) = evalx::macro_f1_report(&gl, &pl, labels)?;
            report.metric = "macro_f1".into();
            report.primary_score = score;
            report.breakdown = scores;
            report.support = support;
        }
        _ => unreachable!("both files are loaded with one task kind"),
    }
    Ok(report)
}
