use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::MetricReport;
use crate::bpe::BpeVocab;
use crate::encoder::{Batch, EncoderParams, ModelConfig};
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;

/// The sixteen acceptability phenomena, in reporting order.
pub const PHENOMENA: [&str; 16] = [
    "anaphor_agreement",
    "argument_structure_transitive",
    "argument_structure_ditransitive",
    "binding",
    "determiners",
    "ellipsis",
    "irregular_forms",
    "island_effects",
    "nominalization",
    "npi_licensing",
    "passives",
    "quantifiers",
    "relative_clauses",
    "scrambling",
    "subject_agreement",
    "suspended_affixation",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimalPair {
    pub phenomenon: String,
    pub good: String,
    pub bad: String,
}

impl MinimalPair {
    pub fn validate(&self) -> Result<()> {
        if !PHENOMENA.contains(&self.phenomenon.as_str()) {
            return Err(Error::Input(format!("unknown phenomenon {:?}", self.phenomenon)));
        }
        if self.good == self.bad {
            return Err(Error::Input(format!(
                "{}: good and bad sentences are identical",
                self.phenomenon
            )));
        }
        Ok(())
    }
}

pub fn read_pairs(path: &Path) -> Result<Vec<MinimalPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: m,
        };
        let pair: MinimalPair = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        pair.validate().map_err(|e| bad(e.to_string()))?;
        out.push(pair);
    }
    Ok(out)
}

pub fn write_pairs(path: &Path, pairs: &[MinimalPair]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for p in pairs {
        let line = serde_json::to_string(p)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Anything that assigns an acceptability score to a sentence.
pub trait SentenceScorer: Sync {
    fn score(&self, sentence: &str) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlengthPolicy {
    /// Skip the pair and count it.
    #[default]
    Skip,
    /// Fail the whole evaluation.
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PllOptions {
    /// Divide by the number of scored tokens.
    pub length_normalize: bool,
    pub overlength: OverlengthPolicy,
    /// Masked copies per forward pass.
    pub batch_size: usize,
}

impl Default for PllOptions {
    fn default() -> Self {
        PllOptions {
            length_normalize: false,
            overlength: OverlengthPolicy::Skip,
            batch_size: 32,
        }
    }
}

/// Pseudo-log-likelihood: each non-special position is masked in turn and
/// the log-probability of its original token is summed.
pub fn pll_score(
    params: &EncoderParams<f32>,
    config: &ModelConfig,
    vocab: &BpeVocab,
    sentence: &str,
    options: &PllOptions,
) -> Result<f64> {
    let ids = vocab.encode(sentence.as_bytes(), true).ids;
    let n = ids.len();
    if n > config.max_positions {
        return Err(Error::Truncation {
            len: n,
            max: config.max_positions,
        });
    }
    let targets: Vec<usize> = (0..n).filter(|&t| !vocab.is_special(ids[t])).collect();
    if targets.is_empty() {
        return Err(Error::Input(format!("{sentence:?} has no scorable token")));
    }
    let v = config.vocab_size;
    let mut total = 0.0f64;
    for group in targets.chunks(options.batch_size.max(1)) {
        let copies: Vec<Vec<u32>> = group
            .iter()
            .map(|&t| {
                let mut c = ids.clone();
                c[t] = vocab.mask_id();
                c
            })
            .collect();
        let batch = Batch::from_sequences(&copies, config.pad_id);
        let (hidden, _) = params.forward::<ChaCha8Rng>(config, &batch, None)?;
        let rows: Vec<usize> = group.iter().enumerate().map(|(i, &t)| i * n + t).collect();
        let (logits, _) = params.mlm_logits_rows(config, &hidden, &rows);
        for (i, &t) in group.iter().enumerate() {
            let row = &logits[i * v..(i + 1) * v];
            total += (row[ids[t] as usize] - log_sum_exp(row)) as f64;
        }
    }
    if options.length_normalize {
        total /= targets.len() as f64;
    }
    Ok(total)
}

/// [`pll_score`] bound to a model and tokenizer.
pub struct PllScorer<'a> {
    pub params: &'a EncoderParams<f32>,
    pub config: &'a ModelConfig,
    pub vocab: &'a BpeVocab,
    pub options: PllOptions,
}

impl SentenceScorer for PllScorer<'_> {
    fn score(&self, sentence: &str) -> Result<f64> {
        pll_score(self.params, self.config, self.vocab, sentence, &self.options)
    }
}

/// Per-phenomenon accuracy (good strictly above bad) and their unweighted
/// mean. Pairs that fail with a truncation error are skipped unless the
/// policy says otherwise.
pub fn turblimp_eval<S: SentenceScorer>(
    scorer: &S,
    pairs: &[MinimalPair],
    overlength: OverlengthPolicy,
) -> Result<MetricReport> {
    for p in pairs {
        p.validate()?;
    }
    let outcomes: Vec<Result<Option<bool>>> = pairs
        .par_iter()
        .map(|p| {
            let scored = scorer.score(&p.good).and_then(|g| Ok((g, scorer.score(&p.bad)?)));
            match scored {
                Ok((g, b)) => Ok(Some(g > b)),
                Err(Error::Truncation { .. }) if overlength == OverlengthPolicy::Skip => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut tally: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    let mut skipped = 0u64;
    for (p, o) in pairs.iter().zip(outcomes) {
        match o? {
            Some(correct) => {
                let e = tally.entry(p.phenomenon.as_str()).or_default();
                e.0 += correct as u64;
                e.1 += 1;
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        ::log::warn!("{skipped} pairs skipped as over-length");
    }
    let mut breakdown = BTreeMap::new();
    let mut support = BTreeMap::new();
    for name in PHENOMENA {
        match tally.get(name) {
            Some(&(c, n)) => {
                breakdown.insert(name.to_string(), 100.0 * c as f64 / n as f64);
                support.insert(name.to_string(), n);
            }
            None => ::log::warn!("phenomenon {name} has no scorable pairs; excluded from the average"),
        }
    }
    if breakdown.is_empty() {
        return Err(Error::InsufficientData("no minimal pair could be scored".into()));
    }
    let avg = breakdown.values().sum::<f64>() / breakdown.len() as f64;
    Ok(MetricReport {
        task: "turblimp".into(),
        metric: "accuracy".into(),
        primary_score: avg,
        breakdown,
        support,
        skipped,
    })
}
