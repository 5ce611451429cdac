use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::BpeVocab;
use crate::error::{Error, Result};

/// Label value for positions that do not contribute to the loss.
pub const IGNORE_LABEL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskingConfig {
    pub mask_prob: f64,
    /// Share of selected positions replaced by the mask token.
    pub mask_token_frac: f64,
    /// Share of selected positions replaced by a random token.
    pub random_token_frac: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            mask_prob: 0.15,
            mask_token_frac: 0.8,
            random_token_frac: 0.1,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mask_prob > 0.0
            && self.mask_prob < 1.0
            && self.mask_token_frac >= 0.0
            && self.random_token_frac >= 0.0
            && self.mask_token_frac + self.random_token_frac <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid masking config {self:?}")))
        }
    }
}

/// Token ids the masker needs to know about.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVocab {
    pub mask_id: u32,
    /// Ids that are never selected and never drawn as random replacements.
    pub special_ids: Vec<u32>,
    pub vocab_size: usize,
    replacement_ids: Vec<u32>,
}

impl MaskVocab {
    pub fn new(mask_id: u32, special_ids: Vec<u32>, vocab_size: usize) -> Self {
        let replacement_ids = (0..vocab_size as u32).filter(|i| !special_ids.contains(i)).collect();
        MaskVocab {
            mask_id,
            special_ids,
            vocab_size,
            replacement_ids,
        }
    }

    pub fn from_vocab(vocab: &BpeVocab) -> Self {
        let specials = (0..vocab.len() as u32).filter(|&i| vocab.is_special(i)).collect();
        Self::new(vocab.mask_id(), specials, vocab.len())
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.special_ids.contains(&id)
    }
}

/// Corrupted inputs plus labels (original ids at selected positions,
/// [`IGNORE_LABEL`] elsewhere).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedTokens {
    pub input_ids: Vec<u32>,
    pub labels: Vec<u32>,
}

impl MaskedTokens {
    pub fn num_selected(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE_LABEL).count()
    }
}

/// The generator behind masking at update `step`: one ChaCha stream per step.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Dynamic MLM corruption, deterministic in `(seed, step)`. Padding
/// (`attention[i] == false`) and special tokens are never selected.
pub fn apply_dynamic_masking(
    token_ids: &[u32],
    attention: &[bool],
    config: &MaskingConfig,
    vocab: &MaskVocab,
    seed: u64,
    step: u64,
) -> Result<MaskedTokens> {
    config.validate()?;
    if token_ids.len() != attention.len() {
        return Err(Error::Structure("token ids and attention mask differ in length".into()));
    }
    let mut rng = step_rng(seed, step);
    let mut input_ids = token_ids.to_vec();
    let mut labels = vec![IGNORE_LABEL; token_ids.len()];
    for (i, (&tok, &live)) in token_ids.iter().zip(attention).enumerate() {
        // One selection draw per slot keeps the stream layout independent of
        // which tokens are special.
        let selected = rng.random::<f64>() < config.mask_prob;
        if !selected || !live || vocab.is_special(tok) {
            continue;
        }
        labels[i] = tok;
        let u = rng.random::<f64>();
        if u < config.mask_token_frac {
            input_ids[i] = vocab.mask_id;
        } else if u < config.mask_token_frac + config.random_token_frac {
            let k = rng.random_range(0..vocab.replacement_ids.len());
            input_ids[i] = vocab.replacement_ids[k];
        }
    }
    Ok(MaskedTokens { input_ids, labels })
}
