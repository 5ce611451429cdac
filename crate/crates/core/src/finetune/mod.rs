//! Task fine-tuning: first-subword label alignment, a training loop with
//! strict-improvement early stopping, and the batch size x learning rate
//! grid search.

mod data;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use data::{
    load_dataset, write_text_file, write_token_file, Dataset, LabeledSequence, LabeledText, Metric, TaskKind,
};

use crate::bpe::BpeVocab;
use crate::encoder::{cross_entropy_sum, Batch, EncoderParams, HeadConfig, HeadKind, ModelConfig, TaskHead, Tensor};
use crate::error::{Error, Result};
use crate::evalx::{entity_f1, macro_f1, micro_f1};
use crate::optim::{AdamW, AdamWConfig};
use crate::pretrain::step_rng;

const HEAD_KEY: u64 = 0x4EAD_0000;
const SHUFFLE_KEY: u64 = 0x5_4FF1;
const DROPOUT_KEY: u64 = 0xD0_F7;
const EVAL_BATCH: usize = 32;

/// A task with its label inventory and splits.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub label_set: Vec<String>,
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

impl TaskSpec {
    pub fn metric(&self) -> Metric {
        self.kind.metric()
    }

    pub fn validate(&self) -> Result<()> {
        if self.label_set.len() < 2 {
            return Err(Error::Config(format!("task {} needs at least 2 labels", self.name)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.label_set {
            if !seen.insert(l) {
                return Err(Error::Config(format!("label {l:?} is listed twice")));
            }
        }
        for (split, ds) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            if ds.is_empty() {
                return Err(Error::Config(format!("{split} split of {} is empty", self.name)));
            }
            let token_level = matches!(ds, Dataset::Tokens(_));
            if token_level != self.kind.is_token_level() {
                return Err(Error::Config(format!("{split} split does not match task kind {:?}", self.kind)));
            }
            if let Some(bad) = ds.labels().into_iter().find(|l| !seen.contains(l)) {
                return Err(Error::Input(format!("{split} split uses label {bad:?} outside the label set")));
            }
        }
        Ok(())
    }

    fn label_index(&self, label: &str) -> u32 {
        self.label_set.iter().position(|l| l == label).expect("labels validated") as u32
    }
}

/// Hyperparameter grid and shared training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    #[serde(default = "default_warmup_fraction")]
    pub warmup_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: AdamWConfig,
}

fn default_warmup_fraction() -> f64 {
    0.1
}

impl GridSpec {
    /// Batch sizes {16, 32} by learning rates {5e-6, 7e-6, 1e-5, 2e-5, 5e-5},
    /// up to 30 epochs with patience 3 and 10% warmup.
    pub fn preset(seed: u64) -> Self {
        GridSpec {
            batch_sizes: vec![16, 32],
            learning_rates: vec![5e-6, 7e-6, 1e-5, 2e-5, 5e-5],
            max_epochs: 30,
            patience: 3,
            warmup_fraction: default_warmup_fraction(),
            seed,
            optimizer: AdamWConfig::default(),
        }
    }

    /// Preset grid with seed 1.
    pub fn base() -> Self {
        Self::preset(1)
    }

    /// Preset grid with seed 42.
    pub fn large() -> Self {
        Self::preset(42)
    }

    /// Every (batch size, learning rate) pair, batch size outermost.
    pub fn trials(&self) -> Vec<TrialConfig> {
        self.batch_sizes
            .iter()
            .flat_map(|&b| {
                self.learning_rates.iter().map(move |&lr| TrialConfig {
                    batch_size: b,
                    learning_rate: lr,
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_sizes.is_empty() || self.learning_rates.is_empty() {
            return Err(Error::Config("grid needs at least one batch size and one learning rate".into()));
        }
        if self.batch_sizes.contains(&0) {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if let Some(lr) = self.learning_rates.iter().find(|lr| !(lr.is_finite() && **lr > 0.0)) {
            return Err(Error::Config(format!("learning rate {lr} must be positive")));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("max_epochs and patience must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup_fraction must be in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs_run: usize,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_dev_score: f64,
    pub test_score: f64,
    pub wall_clock_seconds: f64,
    /// Dev score after every epoch.
    pub dev_curve: Vec<f64>,
}

/// A grid entry: either a finished trial or the error that ended it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config: TrialConfig,
    pub result: Option<TrialResult>,
    pub error: Option<String>,
}

/// Early stopping on a dev score that must strictly improve.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    epochs: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            epochs: 0,
            stale: 0,
        }
    }

    /// Records one epoch's score. Returns `(improved, stop)`.
    pub fn observe(&mut self, score: f64) -> (bool, bool) {
        self.epochs += 1;
        let improved = self.best.is_none_or(|b| score > b);
        if improved {
            self.best = Some(score);
            self.best_epoch = self.epochs;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        (improved, self.stale >= self.patience)
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Token ids of one example plus the positions that carry labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Aligned {
    pub ids: Vec<u32>,
    /// For token tasks, the first-subword position of every word. For
    /// sequence tasks, `[0]`.
    pub label_positions: Vec<usize>,
}

/// Encodes words with a space before all but the first, labelling only the
/// first subword of each word.
pub fn align_words(vocab: &BpeVocab, words: &[String], max_positions: usize) -> Result<Aligned> {
    let mut ids = vec![vocab.bos_id()];
    let mut label_positions = Vec::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        let text = if i == 0 { w.clone() } else { format!(" {w}") };
        let pieces = vocab.encode(text.as_bytes(), false).ids;
        if pieces.is_empty() {
            return Err(Error::Input(format!("word {w:?} encodes to no tokens")));
        }
        label_positions.push(ids.len());
        ids.extend(pieces);
    }
    ids.push(vocab.eos_id());
    if ids.len() > max_positions {
        return Err(Error::Truncation {
            len: ids.len(),
            max: max_positions,
        });
    }
    Ok(Aligned { ids, label_positions })
}

/// Encodes a text for classification, cutting it to `max_positions` while
/// keeping the closing `</s>`.
pub fn align_text(vocab: &BpeVocab, text: &str, max_positions: usize) -> Aligned {
    let mut ids = vocab.encode(text.as_bytes(), true).ids;
    if ids.len() > max_positions {
        ids.truncate(max_positions - 1);
        ids.push(vocab.eos_id());
    }
    Aligned {
        ids,
        label_positions: vec![0],
    }
}

struct Example {
    aligned: Aligned,
    targets: Vec<u32>,
}

fn prepare(task: &TaskSpec, ds: &Dataset, vocab: &BpeVocab, max_positions: usize) -> Result<Vec<Example>> {
    match ds {
        Dataset::Tokens(v) => v
            .iter()
            .map(|s| {
                Ok(Example {
                    aligned: align_words(vocab, &s.words, max_positions)?,
                    targets: s.labels.iter().map(|l| task.label_index(l)).collect(),
                })
            })
            .collect(),
        Dataset::Texts(v) => Ok(v
            .iter()
            .map(|t| Example {
                aligned: align_text(vocab, &t.text, max_positions),
                targets: vec![task.label_index(&t.label)],
            })
            .collect()),
    }
}

/// Predicted label indices for each example's labelled positions.
fn predict_indices(
    config: &ModelConfig,
    params: &EncoderParams<f32>,
    head: &TaskHead<f32>,
    examples: &[Example],
) -> Result<Vec<Vec<u32>>> {
    let n_labels = head.num_labels();
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let seqs: Vec<Vec<u32>> = chunk.iter().map(|e| e.aligned.ids.clone()).collect();
        let batch = Batch::from_sequences(&seqs, config.pad_id);
        let (hidden, _) = params.forward::<ChaCha8Rng>(config, &batch, None)?;
        let (logits, _) = head.forward(&hidden, batch.n_seq, batch.seq_len);
        for (s, e) in chunk.iter().enumerate() {
            let rows = logit_rows(head, s, batch.seq_len, &e.aligned.label_positions);
            out.push(
                rows.into_iter()
                    .map(|r| argmax(&logits[r * n_labels..(r + 1) * n_labels]))
                    .collect(),
            );
        }
    }
    Ok(out)
}

fn logit_rows(head: &TaskHead<f32>, seq: usize, seq_len: usize, positions: &[usize]) -> Vec<usize> {
    match head {
        TaskHead::Token(_) => positions.iter().map(|&p| seq * seq_len + p).collect(),
        TaskHead::Sequence { .. } => vec![seq],
    }
}

fn argmax(row: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Scores label-index predictions with the task's metric.
fn score(task: &TaskSpec, examples: &[Example], pred: &[Vec<u32>]) -> Result<f64> {
    let name = |i: &u32| task.label_set[*i as usize].as_str();
    let gold: Vec<Vec<&str>> = examples.iter().map(|e| e.targets.iter().map(name).collect()).collect();
    let pred: Vec<Vec<&str>> = pred.iter().map(|p| p.iter().map(name).collect()).collect();
    match task.metric() {
        Metric::MicroF1 => micro_f1(&gold, &pred),
        Metric::EntityF1 => entity_f1(&gold, &pred),
        Metric::MacroF1 => {
            let g: Vec<&str> = gold.iter().map(|v| v[0]).collect();
            let p: Vec<&str> = pred.iter().map(|v| v[0]).collect();
            macro_f1(&g, &p, &task.label_set)
        }
    }
}

/// Fine-tuned weights and their record.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub result: TrialResult,
    pub params: EncoderParams<f32>,
    pub head: TaskHead<f32>,
}

struct Prepared {
    train: Vec<Example>,
    dev: Vec<Example>,
    test: Vec<Example>,
}

fn prepare_all(task: &TaskSpec, vocab: &BpeVocab, config: &ModelConfig) -> Result<Prepared> {
    task.validate()?;
    if vocab.len() != config.vocab_size {
        return Err(Error::Config(format!(
            "tokenizer has {} entries but model vocab_size is {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    Ok(Prepared {
        train: prepare(task, &task.train, vocab, config.max_positions)?,
        dev: prepare(task, &task.dev, vocab, config.max_positions)?,
        test: prepare(task, &task.test, vocab, config.max_positions)?,
    })
}

/// Fine-tunes one trial from the pretrained weights.
pub fn train_trial(
    config: &ModelConfig,
    pretrained: &EncoderParams<f32>,
    vocab: &BpeVocab,
    task: &TaskSpec,
    grid: &GridSpec,
    trial: TrialConfig,
) -> Result<TrialOutcome> {
    grid.validate()?;
    let data = prepare_all(task, vocab, config)?;
    run_trial(config, pretrained, task, grid, trial, &data)
}

fn run_trial(
    config: &ModelConfig,
    pretrained: &EncoderParams<f32>,
    task: &TaskSpec,
    grid: &GridSpec,
    trial: TrialConfig,
    data: &Prepared,
) -> Result<TrialOutcome> {
    let started = Instant::now();
    let head_config = HeadConfig {
        kind: if task.kind.is_token_level() { HeadKind::Token } else { HeadKind::Sequence },
        num_labels: task.label_set.len(),
    };
    let hsz = config.hidden_size;
    let mut params = pretrained.clone();
    let mut head = TaskHead::<f32>::init(&head_config, hsz, &mut ChaCha8Rng::seed_from_u64(grid.seed ^ HEAD_KEY))?;
    let mut shapes: Vec<Vec<usize>> = params.tensors().into_iter().map(|(_, t)| t.shape.clone()).collect();
    shapes.extend(head.tensors().into_iter().map(|(_, t)| t.shape.clone()));
    let mut opt = AdamW::new(grid.optimizer, &shapes);

    let steps_per_epoch = data.train.len().div_ceil(trial.batch_size) as u64;
    let total = steps_per_epoch * grid.max_epochs as u64;
    let warmup = (grid.warmup_fraction * total as f64).round() as u64;
    let lr_at = |step: u64| {
        if step < warmup {
            trial.learning_rate * step as f64 / warmup as f64
        } else {
            trial.learning_rate * (total - step) as f64 / (total - warmup) as f64
        }
    };

    let mut stopper = EarlyStopping::new(grid.patience);
    let mut best = (params.clone(), head.clone());
    let mut curve = Vec::new();
    let mut step = 0u64;
    let n_labels = head_config.num_labels;
    for epoch in 0..grid.max_epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut step_rng(grid.seed ^ SHUFFLE_KEY, epoch as u64));
        for idx in order.chunks(trial.batch_size) {
            let examples: Vec<&Example> = idx.iter().map(|&i| &data.train[i]).collect();
            let seqs: Vec<Vec<u32>> = examples.iter().map(|e| e.aligned.ids.clone()).collect();
            let batch = Batch::from_sequences(&seqs, config.pad_id);
            let mut rng = step_rng(grid.seed ^ DROPOUT_KEY, step);
            let (hidden, cache) = params.forward(config, &batch, Some(&mut rng))?;
            let (logits, head_cache) = head.forward(&hidden, batch.n_seq, batch.seq_len);

            let mut rows = Vec::new();
            let mut targets = Vec::new();
            for (s, e) in examples.iter().enumerate() {
                rows.extend(logit_rows(&head, s, batch.seq_len, &e.aligned.label_positions));
                targets.extend_from_slice(&e.targets);
            }
            let gathered: Vec<f32> = rows
                .iter()
                .flat_map(|&r| logits[r * n_labels..(r + 1) * n_labels].iter().copied())
                .collect();
            let (nll, d_rows) = cross_entropy_sum(&gathered, &targets, n_labels, 1.0 / rows.len() as f32);
            step += 1;
            if !nll.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let mut d_logits = vec![0.0f32; logits.len()];
            for (k, &r) in rows.iter().enumerate() {
                d_logits[r * n_labels..(r + 1) * n_labels].copy_from_slice(&d_rows[k * n_labels..(k + 1) * n_labels]);
            }
            let mut head_grad = TaskHead::zeros(&head_config, hsz);
            let d_hidden = head.backward(&hidden, &head_cache, &d_logits, &mut head_grad);
            let mut grads = EncoderParams::<f32>::zeros(config);
            params.backward(config, &cache, &d_hidden, &mut grads);

            let mut all_params: Vec<&mut Tensor<f32>> = params.tensors_mut();
            all_params.extend(head.tensors_mut());
            let mut all_grads: Vec<&Tensor<f32>> = grads.tensors().into_iter().map(|(_, t)| t).collect();
            all_grads.extend(head_grad.tensors().into_iter().map(|(_, t)| t));
            opt.step(all_params, all_grads, lr_at(step - 1));
        }
        let pred = predict_indices(config, &params, &head, &data.dev)?;
        let dev_score = score(task, &data.dev, &pred)?;
        curve.push(dev_score);
        let (improved, stop) = stopper.observe(dev_score);
        log::info!(
            "{} bs={} lr={:e} epoch {}: dev {:.2}",
            task.name,
            trial.batch_size,
            trial.learning_rate,
            epoch + 1,
            dev_score
        );
        if improved {
            best = (params.clone(), head.clone());
        }
        if stop {
            break;
        }
    }
    let (params, head) = best;
    let pred = predict_indices(config, &params, &head, &data.test)?;
    let test_score = score(task, &data.test, &pred)?;
    Ok(TrialOutcome {
        result: TrialResult {
            batch_size: trial.batch_size,
            learning_rate: trial.learning_rate,
            epochs_run: curve.len(),
            best_epoch: stopper.best_epoch(),
            best_dev_score: stopper.best().unwrap_or(f64::NAN),
            test_score,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            dev_curve: curve,
        },
        params,
        head,
    })
}

/// Picks the record with the highest dev score; ties go to the lower
/// learning rate, then the smaller batch.
pub fn select_best(records: &[TrialRecord]) -> Option<usize> {
    let mut best: Option<(usize, &TrialResult)> = None;
    for (i, r) in records.iter().enumerate() {
        let Some(res) = &r.result else { continue };
        let better = match best {
            None => true,
            Some((_, b)) => {
                res.best_dev_score > b.best_dev_score
                    || (res.best_dev_score == b.best_dev_score
                        && (res.learning_rate, res.batch_size) < (b.learning_rate, b.batch_size))
            }
        };
        if better {
            best = Some((i, res));
        }
    }
    best.map(|(i, _)| i)
}

/// Grid results with the selected trial's weights.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub records: Vec<TrialRecord>,
    pub wall_clock_seconds: f64,
    pub best_index: usize,
    pub best: TrialOutcome,
}

/// Runs every trial of the grid. Failed trials are recorded and skipped; the
/// grid fails only if none succeeds.
pub fn run_grid(
    config: &ModelConfig,
    pretrained: &EncoderParams<f32>,
    vocab: &BpeVocab,
    task: &TaskSpec,
    grid: &GridSpec,
) -> Result<GridOutcome> {
    grid.validate()?;
    let started = Instant::now();
    let data = prepare_all(task, vocab, config)?;
    let mut records = Vec::new();
    let mut kept: Option<TrialOutcome> = None;
    for trial in grid.trials() {
        match run_trial(config, pretrained, task, grid, trial, &data) {
            Ok(outcome) => {
                records.push(TrialRecord {
                    config: trial,
                    result: Some(outcome.result.clone()),
                    error: None,
                });
                if select_best(&records) == Some(records.len() - 1) {
                    kept = Some(outcome);
                }
            }
            Err(e) => {
                log::warn!("trial bs={} lr={:e} failed: {e}", trial.batch_size, trial.learning_rate);
                records.push(TrialRecord {
                    config: trial,
                    result: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let best_index = select_best(&records).ok_or_else(|| Error::Grid("every grid trial failed".into()))?;
    Ok(GridOutcome {
        records,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        best_index,
        best: kept.expect("best trial outcome is kept"),
    })
}

/// Label predictions of a fine-tuned model on a dataset, as label strings.
pub fn predict(
    config: &ModelConfig,
    params: &EncoderParams<f32>,
    head: &TaskHead<f32>,
    vocab: &BpeVocab,
    task: &TaskSpec,
    ds: &Dataset,
) -> Result<Vec<Vec<String>>> {
    let examples = prepare(task, ds, vocab, config.max_positions)?;
    let idx = predict_indices(config, params, head, &examples)?;
    Ok(idx
        .into_iter()
        .map(|p| p.into_iter().map(|i| task.label_set[i as usize].clone()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_waits_for_patience() {
        let mut es = EarlyStopping::new(3);
        let stops: Vec<bool> = [0.5, 0.6, 0.6, 0.6, 0.6].iter().map(|&s| es.observe(s).1).collect();
        assert_eq!(stops, vec![false, false, false, false, true]);
        assert_eq!(es.best_epoch(), 2);
    }

    #[test]
    fn preset_grid_has_ten_trials() {
        let g = GridSpec::base();
        assert_eq!(g.trials().len(), 10);
        assert_eq!((g.max_epochs, g.patience, g.seed), (30, 3, 1));
        assert_eq!(GridSpec::large().seed, 42);
        g.validate().unwrap();
    }

    fn record(bs: usize, lr: f64, dev: Option<f64>) -> TrialRecord {
        TrialRecord {
            config: TrialConfig {
                batch_size: bs,
                learning_rate: lr,
            },
            result: dev.map(|d| TrialResult {
                batch_size: bs,
                learning_rate: lr,
                epochs_run: 1,
                best_epoch: 1,
                best_dev_score: d,
                test_score: 0.0,
                wall_clock_seconds: 0.0,
                dev_curve: vec![d],
            }),
            error: None,
        }
    }

    #[test]
    fn selection_breaks_ties_by_lr_then_batch() {
        let recs = vec![
            record(32, 2e-5, Some(90.0)),
            record(16, 3e-5, Some(90.0)),
            record(16, 2e-5, Some(90.0)),
            record(16, 1e-5, None),
            record(32, 5e-5, Some(80.0)),
        ];
        assert_eq!(select_best(&recs), Some(2));
        assert_eq!(select_best(&[record(16, 1e-5, None)]), None);
    }

    #[test]
    fn alignment_marks_first_subwords() {
        let docs = ["evlerimizden geldik evlerimizden geldik"];
        let vocab = crate::bpe::train_vocab(&docs, 280, Default::default()).unwrap();
        let words: Vec<String> = ["evlerimizden", "geldik"].iter().map(|s| s.to_string()).collect();
        let a = align_words(&vocab, &words, 64).unwrap();
        assert_eq!(a.label_positions.len(), 2);
        assert_eq!(a.label_positions[0], 1);
        assert_eq!(a.ids[0], vocab.bos_id());
        assert_eq!(*a.ids.last().unwrap(), vocab.eos_id());
        let tail = vocab.decode(&a.ids[a.label_positions[1]..a.ids.len() - 1]).unwrap();
        assert_eq!(tail, b" geldik");
        assert!(matches!(align_words(&vocab, &words, a.ids.len() - 1), Err(Error::Truncation { .. })));
    }
}
