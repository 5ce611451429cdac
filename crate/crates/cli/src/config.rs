//! Optional TOML run configuration. Every key is optional and command-line
//! flags take precedence over file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub input: Option<Vec<PathBuf>>,
    pub shard_bytes: Option<u64>,
    pub synth_bytes: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSection {
    pub input: Option<PathBuf>,
    pub vocab_size: Option<usize>,
    pub sample_bytes: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub preset: Option<String>,
    pub corpus: Option<PathBuf>,
    pub tokenizer: Option<PathBuf>,
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub heads: Option<usize>,
    pub ffn: Option<usize>,
    pub max_positions: Option<usize>,
    pub dropout: Option<f64>,
    pub steps: Option<u64>,
    pub warmup: Option<u64>,
    pub lr: Option<f64>,
    pub end_lr: Option<f64>,
    pub power: Option<f64>,
    pub tokens_per_update: Option<u64>,
    pub seq_len: Option<usize>,
    pub micro_batch: Option<usize>,
    pub evals_per_epoch: Option<usize>,
    pub max_valid_blocks: Option<usize>,
    pub valid_fraction: Option<f64>,
    pub log_every: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    pub task: Option<String>,
    pub data: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub tokenizer: Option<PathBuf>,
    pub labels: Option<Vec<String>>,
    pub preset: Option<String>,
    pub batch_sizes: Option<Vec<usize>>,
    pub learning_rates: Option<Vec<f64>>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub warmup_fraction: Option<f64>,
    pub model_name: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub length_normalize: Option<bool>,
    pub overlength: Option<String>,
    pub batch_size: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| {
            CliError::usage(format!("invalid config {}: {}", path.display(), e.message()))
        })
    }
}

/// `flag` if given, else `file`, else `default`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[pretrain]\nsteps = 5\n").is_ok());
        assert!(toml::from_str::<RunConfig>("[pretrain]\nstep = 5\n").is_err());
        assert!(toml::from_str::<RunConfig>("colour = 1\n").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        assert_eq!(pick(Some(3), Some(2), 1), 3);
        assert_eq!(pick(None, Some(2), 1), 2);
        assert_eq!(pick(None, None, 1), 1);
    }
}
