//! Scoring protocols: tag-level micro F1, entity-span F1, macro F1 and
//! minimal-pair acceptability by pseudo-log-likelihood.

mod metrics;
mod turblimp;

pub use metrics::{
    bio_spans, entity_f1, macro_f1, macro_f1_report, micro_f1, per_tag_f1, round2, MetricReport, Span, OUTSIDE_TAG,
};
pub use turblimp::{
    pll_score, read_pairs, turblimp_eval, write_pairs, MinimalPair, OverlengthPolicy, PllOptions, PllScorer,
    SentenceScorer, PHENOMENA,
};
