//! Masked-language-model pretraining: warmup/polynomial-decay schedule,
//! dynamic masking, gradient accumulation, per-step training perplexity,
//! periodic validation perplexity and resumable checkpoints.
//!
//! All randomness is derived from `(seed, step)`, so a run resumed from any
//! checkpoint continues bit-for-bit like the uninterrupted run.

mod data;
mod log;
mod masking;
mod schedule;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use data::{encode_documents, EpochPlan, PackedBlocks};
pub use log::{render_svg, PerplexityLog, CURVES_SVG, TRAIN_CSV, VALID_CSV};
pub use masking::{apply_dynamic_masking, step_rng, MaskVocab, MaskedTokens, MaskingConfig, IGNORE_LABEL};
pub use schedule::TrainSchedule;

use crate::bpe::BpeVocab;
use crate::encoder::{cross_entropy_sum, Batch, Checkpoint, EncoderParams, ModelConfig};
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig};

const DROPOUT_KEY: u64 = 0xD50F_0000_0000_0001;
const VALID_KEY: u64 = 0x7A11_D000_0000_0002;
const INIT_KEY: u64 = 0x1417_0000_0000_0003;

const TOY_PEAK_LR: f64 = 4e-3;

pub const LOG_METADATA_KEY: &str = "perplexity_log";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    /// Tokens per packed block including `<s>` and `</s>`.
    pub seq_len: usize,
    /// Sequences per forward/backward pass; gradients of the micro-batches
    /// of one update are summed.
    pub micro_batch: usize,
    #[serde(default)]
    pub masking: MaskingConfig,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    /// Validation passes per epoch (the last one falls on the epoch end).
    #[serde(default = "one")]
    pub evals_per_epoch: usize,
    /// Cap on validation blocks; `None` uses all of them.
    #[serde(default)]
    pub max_valid_blocks: Option<usize>,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
}

fn one() -> usize {
    1
}

fn default_log_every() -> u64 {
    100
}

impl PretrainConfig {
    /// Desk-scale setup: 2 layers, hidden 64, 4 heads, FFN 256, blocks of 64
    /// tokens, 32 blocks per update, 2000 updates.
    pub fn toy(vocab_size: usize, seed: u64) -> Self {
        let mut model = ModelConfig::base(vocab_size);
        model.num_layers = 2;
        model.hidden_size = 64;
        model.num_heads = 4;
        model.ffn_size = 256;
        model.max_positions = 64;
        PretrainConfig {
            model,
            schedule: TrainSchedule {
                total_updates: 2000,
                warmup_updates: 200,
                peak_lr: TOY_PEAK_LR,
                end_lr: 0.0,
                power: 1.0,
                tokens_per_update: 64 * 32,
                seed,
            },
            seq_len: 64,
            micro_batch: 16,
            masking: MaskingConfig::default(),
            optimizer: AdamWConfig::default(),
            evals_per_epoch: 4,
            max_valid_blocks: Some(128),
            log_every: 100,
        }
    }

    /// Base encoder with the base schedule on 512-token blocks.
    pub fn base(vocab_size: usize, seed: u64) -> Self {
        PretrainConfig {
            model: ModelConfig::base(vocab_size),
            schedule: TrainSchedule { seed, ..TrainSchedule::base() },
            seq_len: 512,
            micro_batch: 16,
            masking: MaskingConfig::default(),
            optimizer: AdamWConfig::default(),
            evals_per_epoch: 1,
            max_valid_blocks: None,
            log_every: default_log_every(),
        }
    }

    /// Large encoder with the large schedule on 512-token blocks.
    pub fn large(vocab_size: usize, seed: u64) -> Self {
        PretrainConfig {
            model: ModelConfig::large(vocab_size),
            schedule: TrainSchedule { seed, ..TrainSchedule::large() },
            ..Self::base(vocab_size, seed)
        }
    }

    pub fn sequences_per_update(&self) -> usize {
        (self.schedule.tokens_per_update as usize / self.seq_len).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.masking.validate()?;
        if self.seq_len < 3 || self.seq_len > self.model.max_positions {
            return Err(Error::Config(format!(
                "seq_len {} must lie in [3, max_positions={}]",
                self.seq_len, self.model.max_positions
            )));
        }
        if self.schedule.tokens_per_update % self.seq_len as u64 != 0 {
            return Err(Error::Config(format!(
                "tokens_per_update {} is not a multiple of seq_len {}",
                self.schedule.tokens_per_update, self.seq_len
            )));
        }
        if self.micro_batch == 0 || self.evals_per_epoch == 0 {
            return Err(Error::Config("micro_batch and evals_per_epoch must be positive".into()));
        }
        Ok(())
    }
}

/// Mean NLL over labelled positions and their count, or `None` when no
/// position is labelled. `logits` is `[labels.len(), vocab]`.
pub fn mlm_loss(logits: &[f32], labels: &[u32], vocab: usize) -> Option<(f64, usize)> {
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != IGNORE_LABEL).collect();
    if rows.is_empty() {
        return None;
    }
    let mut picked = Vec::with_capacity(rows.len() * vocab);
    for &r in &rows {
        picked.extend_from_slice(&logits[r * vocab..(r + 1) * vocab]);
    }
    let targets: Vec<u32> = rows.iter().map(|&r| labels[r]).collect();
    let (sum, _) = cross_entropy_sum(&picked, &targets, vocab, 1.0f32);
    Some((sum / rows.len() as f64, rows.len()))
}

/// Tokenized and packed train/validation streams.
#[derive(Debug, Clone)]
pub struct PretrainData {
    pub train: PackedBlocks,
    pub valid: PackedBlocks,
}

impl PretrainData {
    pub fn prepare<D: AsRef<[u8]>>(vocab: &BpeVocab, seq_len: usize, train: &[D], valid: &[D]) -> Result<Self> {
        let pack = |docs: &[D]| {
            PackedBlocks::pack(&encode_documents(vocab, docs), seq_len, vocab.bos_id(), vocab.eos_id())
        };
        Ok(PretrainData {
            train: pack(train)?,
            valid: pack(valid)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: EncoderParams<f32>,
    pub log: PerplexityLog,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub skipped_steps: u64,
}

pub fn epoch_checkpoint_name(epoch: u64) -> String {
    format!("checkpoint_epoch{epoch}.ckpt")
}

pub const FINAL_CHECKPOINT: &str = "checkpoint_last.ckpt";

struct Trainer<'a> {
    cfg: &'a PretrainConfig,
    mask_vocab: MaskVocab,
    pad_id: u32,
}

impl Trainer<'_> {
    /// Mean masked NLL over the validation blocks with fixed masks and no
    /// dropout.
    fn validation_nll(&self, params: &EncoderParams<f32>, valid: &PackedBlocks) -> Result<f64> {
        let n = self.cfg.max_valid_blocks.map_or(valid.len(), |m| m.min(valid.len()));
        let mut sum = 0.0;
        let mut count = 0usize;
        for (bi, chunk) in valid.blocks[..n].chunks(self.cfg.micro_batch).enumerate() {
            let batch = Batch::from_sequences(chunk, self.pad_id);
            let masked = apply_dynamic_masking(
                &batch.token_ids,
                &batch.attention_mask,
                &self.cfg.masking,
                &self.mask_vocab,
                self.cfg.schedule.seed ^ VALID_KEY,
                bi as u64,
            )?;
            let rows: Vec<usize> = (0..masked.labels.len()).filter(|&i| masked.labels[i] != IGNORE_LABEL).collect();
            if rows.is_empty() {
                continue;
            }
            let input = Batch {
                token_ids: masked.input_ids,
                ..batch
            };
            let (hidden, _) = params.forward::<ChaCha8Rng>(&self.cfg.model, &input, None)?;
            let (logits, _) = params.mlm_logits_rows(&self.cfg.model, &hidden, &rows);
            let targets: Vec<u32> = rows.iter().map(|&r| masked.labels[r]).collect();
            let (s, _) = cross_entropy_sum(&logits, &targets, self.cfg.model.vocab_size, 1.0f32);
            sum += s;
            count += rows.len();
        }
        if count == 0 {
            return Err(Error::InsufficientData("validation blocks yield no masked positions".into()));
        }
        Ok(sum / count as f64)
    }

    /// Accumulates gradients of one update into `grads`; returns the summed
    /// NLL and the number of masked positions, or `None` if nothing was
    /// masked.
    fn update_gradients(
        &self,
        params: &EncoderParams<f32>,
        blocks: &[&Vec<u32>],
        step: u64,
        grads: &mut EncoderParams<f32>,
    ) -> Result<Option<(f64, usize)>> {
        let model = &self.cfg.model;
        let seqs: Vec<Vec<u32>> = blocks.iter().map(|b| (*b).clone()).collect();
        let batch = Batch::from_sequences(&seqs, self.pad_id);
        let masked = apply_dynamic_masking(
            &batch.token_ids,
            &batch.attention_mask,
            &self.cfg.masking,
            &self.mask_vocab,
            self.cfg.schedule.seed,
            step,
        )?;
        let total = masked.num_selected();
        if total == 0 {
            return Ok(None);
        }
        let scale = 1.0 / total as f32;
        let mut dropout_rng = step_rng(self.cfg.schedule.seed ^ DROPOUT_KEY, step);
        let t = batch.seq_len;
        let mut nll = 0.0;
        for start in (0..batch.n_seq).step_by(self.cfg.micro_batch) {
            let end = (start + self.cfg.micro_batch).min(batch.n_seq);
            let span = start * t..end * t;
            let labels = &masked.labels[span.clone()];
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != IGNORE_LABEL).collect();
            if rows.is_empty() {
                continue;
            }
            let micro = Batch {
                n_seq: end - start,
                seq_len: t,
                token_ids: masked.input_ids[span.clone()].to_vec(),
                attention_mask: batch.attention_mask[span].to_vec(),
            };
            let (hidden, cache) = params.forward(model, &micro, Some(&mut dropout_rng))?;
            let (logits, head_cache) = params.mlm_logits_rows(model, &hidden, &rows);
            let targets: Vec<u32> = rows.iter().map(|&r| labels[r]).collect();
            let (s, d_logits) = cross_entropy_sum(&logits, &targets, model.vocab_size, scale);
            if !s.is_finite() {
                return Err(Error::NonFiniteLoss { step: step + 1 });
            }
            nll += s;
            let d_hidden = params.mlm_head_backward(model, &head_cache, &d_logits, micro.rows(), grads);
            params.backward(model, &cache, &d_hidden, grads);
        }
        Ok(Some((nll, total)))
    }
}

fn save_checkpoint(
    path: &Path,
    cfg: &PretrainConfig,
    params: &EncoderParams<f32>,
    opt: &AdamW,
    step: u64,
    log: &PerplexityLog,
) -> Result<()> {
    let mut ck = Checkpoint::new(&cfg.model, params, None, step);
    ck.optimizer = Some(opt.state().clone());
    ck.rng_state = cfg.schedule.seed.to_le_bytes().to_vec();
    ck.metadata.insert("kind".into(), "pretrain".into());
    ck.metadata.insert("pretrain_config".into(), serde_json::to_string(cfg)?);
    ck.metadata.insert(LOG_METADATA_KEY.into(), serde_json::to_string(log)?);
    ck.save(path)
}

/// Runs (or resumes) pretraining and writes checkpoints plus perplexity logs
/// into `out_dir`.
pub fn train(
    cfg: &PretrainConfig,
    vocab: &BpeVocab,
    data: &PretrainData,
    out_dir: &Path,
    resume: Option<&Checkpoint>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if vocab.len() != cfg.model.vocab_size {
        return Err(Error::Config(format!(
            "tokenizer has {} entries but model vocab_size is {}",
            vocab.len(),
            cfg.model.vocab_size
        )));
    }
    if vocab.pad_id() != cfg.model.pad_id {
        return Err(Error::Config("tokenizer and model disagree on pad_id".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let trainer = Trainer {
        cfg,
        mask_vocab: MaskVocab::from_vocab(vocab),
        pad_id: vocab.pad_id(),
    };
    let plan = EpochPlan {
        num_blocks: data.train.len(),
        sequences_per_update: cfg.sequences_per_update(),
        seed: cfg.schedule.seed,
    };
    let upe = plan.updates_per_epoch();
    let shapes: Vec<Vec<usize>> = crate::encoder::parameter_manifest(&cfg.model)
        .into_iter()
        .map(|(_, s)| s)
        .collect();

    let (mut params, mut opt, mut step, mut log) = match resume {
        Some(ck) => {
            if ck.config != cfg.model {
                return Err(Error::Checkpoint("checkpoint model config differs from the run config".into()));
            }
            let state = ck
                .optimizer
                .clone()
                .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state to resume from".into()))?;
            let mut log: PerplexityLog = match ck.metadata.get(LOG_METADATA_KEY) {
                Some(s) => serde_json::from_str(s)?,
                None => PerplexityLog::default(),
            };
            log.truncate_to_step(ck.step, upe);
            (ck.encoder_params()?, AdamW::from_state(cfg.optimizer, state), ck.step, log)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.schedule.seed ^ INIT_KEY);
            let params = EncoderParams::<f32>::init(&cfg.model, &mut rng);
            (params, AdamW::new(cfg.optimizer, &shapes), 0, PerplexityLog::default())
        }
    };
    if step > cfg.schedule.total_updates {
        return Err(Error::Checkpoint(format!(
            "checkpoint step {step} is past total_updates {}",
            cfg.schedule.total_updates
        )));
    }
    if step == 0 && log.valid_points.is_empty() {
        let nll = trainer.validation_nll(&params, &data.valid)?;
        log.push_valid(0.0, nll.exp())?;
        ::log::info!("initial validation perplexity {:.3}", nll.exp());
    }

    let mut checkpoints = Vec::new();
    let mut skipped = 0u64;
    let mut order_epoch = u64::MAX;
    let mut order = Vec::new();
    let k = cfg.evals_per_epoch as u64;
    while step < cfg.schedule.total_updates {
        let epoch = plan.epoch_of(step);
        if epoch != order_epoch {
            order = plan.order(epoch);
            order_epoch = epoch;
        }
        let blocks: Vec<&Vec<u32>> = plan
            .blocks_for(step, &order)
            .into_iter()
            .map(|i| &data.train.blocks[i])
            .collect();
        let lr = cfg.schedule.lr_at(step)?;
        let mut grads = EncoderParams::<f32>::zeros(&cfg.model);
        let outcome = trainer.update_gradients(&params, &blocks, step, &mut grads)?;
        let done = step + 1;
        match outcome {
            Some((nll, count)) => {
                let mean = nll / count as f64;
                if !mean.is_finite() {
                    return Err(Error::NonFiniteLoss { step: done });
                }
                let grad_refs: Vec<&crate::encoder::Tensor<f32>> = grads.tensors().into_iter().map(|(_, t)| t).collect();
                opt.step(params.tensors_mut(), grad_refs, lr);
                log.push_train(done, mean.exp())?;
                if done % cfg.log_every == 0 || done == 1 {
                    ::log::info!("step {done}: lr {lr:.3e} train ppl {:.3}", mean.exp());
                }
            }
            None => {
                skipped += 1;
                ::log::warn!("step {done}: no position was masked, update skipped");
            }
        }
        step = done;

        let crossed = (done * k) / upe > ((done - 1) * k) / upe;
        let last = done == cfg.schedule.total_updates;
        if crossed || last {
            let label = if crossed {
                ((done * k) / upe) as f64 / k as f64
            } else {
                done as f64 / upe as f64
            };
            let nll = trainer.validation_nll(&params, &data.valid)?;
            if !nll.is_finite() {
                return Err(Error::NonFiniteLoss { step: done });
            }
            log.push_valid(label, nll.exp())?;
            ::log::info!("epoch {label:.3}: validation perplexity {:.3}", nll.exp());
        }
        if done % upe == 0 {
            let path = out_dir.join(epoch_checkpoint_name(done / upe));
            save_checkpoint(&path, cfg, &params, &opt, done, &log)?;
            checkpoints.push(path);
        }
    }
    let final_path = out_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_path, cfg, &params, &opt, step, &log)?;
    log.save(out_dir)?;
    Ok(TrainOutput {
        params,
        log,
        checkpoints,
        final_checkpoint: final_path,
        skipped_steps: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_vocab() {
        let v = 37;
        let logits = vec![0.25f32; 3 * v];
        let (nll, n) = mlm_loss(&logits, &[4, IGNORE_LABEL, 9], v).unwrap();
        assert_eq!(n, 2);
        assert!((nll - (v as f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn confident_logits_approach_zero() {
        let v = 10;
        let mut logits = vec![0.0f32; v];
        logits[3] = 40.0;
        let (nll, _) = mlm_loss(&logits, &[3], v).unwrap();
        assert!(nll < 1e-12);
    }

    #[test]
    fn ignored_positions_do_not_matter() {
        let v = 5;
        let logits: Vec<f32> = (0..10).map(|i| (i as f32 * 0.7).sin()).collect();
        let a = mlm_loss(&logits, &[IGNORE_LABEL, 2], v).unwrap();
        let mut tweaked = logits.clone();
        tweaked[0] = 100.0;
        let b = mlm_loss(&tweaked, &[IGNORE_LABEL, 2], v).unwrap();
        assert_eq!(a, b);
        assert!(mlm_loss(&logits, &[IGNORE_LABEL, IGNORE_LABEL], v).is_none());
    }
}
