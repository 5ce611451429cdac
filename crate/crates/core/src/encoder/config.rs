use serde::{Deserialize, Serialize};

use crate::bpe::NUM_SPECIAL_TOKENS;
use crate::error::{Error, Result};

/// Hyperparameters of the RoBERTa-style encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub vocab_size: usize,
    /// Longest sequence the model accepts, counting `<s>` and `</s>`.
    pub max_positions: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_dropout")]
    pub attention_dropout: f64,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    /// Id of the padding token; positional rows start right after it.
    #[serde(default = "default_pad")]
    pub pad_id: u32,
}

fn default_dropout() -> f64 {
    0.1
}

fn default_eps() -> f64 {
    1e-5
}

fn default_pad() -> u32 {
    crate::bpe::PAD_ID
}

impl ModelConfig {
    /// 12 layers, hidden 768, 12 heads, FFN 3072.
    pub fn base(vocab_size: usize) -> Self {
        Self::preset(12, 768, 12, 3072, vocab_size)
    }

    /// 24 layers, hidden 1024, 16 heads, FFN 4096.
    pub fn large(vocab_size: usize) -> Self {
        Self::preset(24, 1024, 16, 4096, vocab_size)
    }

    fn preset(
        num_layers: usize,
        hidden_size: usize,
        num_heads: usize,
        ffn_size: usize,
        vocab_size: usize,
    ) -> Self {
        ModelConfig {
            num_layers,
            hidden_size,
            num_heads,
            ffn_size,
            vocab_size,
            max_positions: 512,
            dropout: default_dropout(),
            attention_dropout: default_dropout(),
            layer_norm_eps: default_eps(),
            pad_id: default_pad(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    /// Rows in the positional table: one per position plus the rows up to and
    /// including the pad id.
    pub fn position_rows(&self) -> usize {
        self.max_positions + self.pad_id as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.num_heads == 0 || self.ffn_size == 0 {
            return Err(Error::Config(
                "hidden_size, num_heads and ffn_size must be positive".into(),
            ));
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.vocab_size < 256 + NUM_SPECIAL_TOKENS {
            return Err(Error::Config(format!(
                "vocab_size {} is below the byte alphabet plus specials ({})",
                self.vocab_size,
                256 + NUM_SPECIAL_TOKENS
            )));
        }
        if self.max_positions < 2 {
            return Err(Error::Config("max_positions must be at least 2".into()));
        }
        for (name, p) in [
            ("dropout", self.dropout),
            ("attention_dropout", self.attention_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}
