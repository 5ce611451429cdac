use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The "outside" tag; never counted as a positive prediction.
pub const OUTSIDE_TAG: &str = "O";

/// Half-up rounding to two decimals.
pub fn round2(x: f64) -> f64 {
    ((x * 100.0) + 0.5 + 1e-9).floor() / 100.0
}

/// A scored evaluation with an optional breakdown by label or phenomenon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub metric: String,
    /// In [0, 100], unrounded.
    pub primary_score: f64,
    pub breakdown: BTreeMap<String, f64>,
    pub support: BTreeMap<String, u64>,
    /// Items that could not be scored (e.g. over-length sentences).
    #[serde(default)]
    pub skipped: u64,
}

fn f1_percent(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        200.0 * tp as f64 / denom as f64
    }
}

fn check_shape<S>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Input(format!(
            "gold has {} sequences, prediction has {}",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Input(format!(
                "sequence {i}: gold has {} tags, prediction has {}",
                g.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

/// Token-level micro F1 over every tag except [`OUTSIDE_TAG`]. A position
/// whose predicted tag differs from its gold tag is a false positive for the
/// prediction and a false negative for the gold tag. When neither side has
/// any non-outside tag the score is 100.
pub fn micro_f1<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<f64> {
    check_shape(gold, pred)?;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (g, p) in gold.iter().zip(pred) {
        for (g, p) in g.iter().zip(p) {
            let (g, p) = (g.as_ref(), p.as_ref());
            if g == p {
                if g != OUTSIDE_TAG {
                    tp += 1;
                }
            } else {
                if p != OUTSIDE_TAG {
                    fp += 1;
                }
                if g != OUTSIDE_TAG {
                    fn_ += 1;
                }
            }
        }
    }
    if tp + fp + fn_ == 0 {
        return Ok(100.0);
    }
    Ok(f1_percent(tp, fp, fn_))
}

/// Per-tag F1 (outside tag excluded) with gold support.
pub fn per_tag_f1<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<(BTreeMap<String, f64>, BTreeMap<String, u64>)> {
    check_shape(gold, pred)?;
    let mut counts: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for (g, p) in gold.iter().flatten().zip(pred.iter().flatten()) {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g == p {
            if g != OUTSIDE_TAG {
                counts.entry(g.to_string()).or_default().0 += 1;
            }
        } else {
            if p != OUTSIDE_TAG {
                counts.entry(p.to_string()).or_default().1 += 1;
            }
            if g != OUTSIDE_TAG {
                counts.entry(g.to_string()).or_default().2 += 1;
            }
        }
    }
    let scores = counts.iter().map(|(k, &(tp, fp, f))| (k.clone(), f1_percent(tp, fp, f))).collect();
    let support = counts.iter().map(|(k, &(tp, _, f))| (k.clone(), tp + f)).collect();
    Ok((scores, support))
}

/// A typed entity span over token positions `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// Decodes BIO tags into spans. Lenient: an `I-X` that does not continue an
/// open `X` span opens a new one.
pub fn bio_spans<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (i, t) in tags.iter().enumerate() {
        let t = t.as_ref();
        if t == OUTSIDE_TAG {
            spans.extend(open.take());
            continue;
        }
        let (prefix, label) = t
            .split_once('-')
            .filter(|(p, l)| (*p == "B" || *p == "I") && !l.is_empty())
            .ok_or_else(|| Error::Input(format!("tag {t:?} is not O, B-X or I-X")))?;
        let continues = prefix == "I" && open.as_ref().is_some_and(|s| s.label == label);
        if continues {
            open.as_mut().unwrap().end = i + 1;
        } else {
            if prefix == "I" {
                ::log::debug!("lenient BIO: {t} at position {i} opens a span");
            }
            spans.extend(open.take());
            open = Some(Span {
                label: label.to_string(),
                start: i,
                end: i + 1,
            });
        }
    }
    spans.extend(open);
    Ok(spans)
}

/// Exact-match span F1, micro-averaged over all entity types. Two empty
/// span sets score 100.
pub fn entity_f1<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<f64> {
    check_shape(gold, pred)?;
    let (mut tp, mut n_gold, mut n_pred) = (0u64, 0u64, 0u64);
    for (g, p) in gold.iter().zip(pred) {
        let gs: BTreeSet<Span> = bio_spans(g)?.into_iter().collect();
        let ps: BTreeSet<Span> = bio_spans(p)?.into_iter().collect();
        tp += gs.intersection(&ps).count() as u64;
        n_gold += gs.len() as u64;
        n_pred += ps.len() as u64;
    }
    if n_gold + n_pred == 0 {
        return Ok(100.0);
    }
    Ok(f1_percent(tp, n_pred - tp, n_gold - tp))
}

/// Per-class F1 over the declared label set and its unweighted mean. A
/// declared class absent from both gold and prediction contributes 0.
pub fn macro_f1_report<S: AsRef<str>, L: AsRef<str>>(
    gold: &[S],
    pred: &[S],
    labels: &[L],
) -> Result<(f64, BTreeMap<String, f64>, BTreeMap<String, u64>)> {
    if gold.len() != pred.len() {
        return Err(Error::Input(format!(
            "gold has {} items, prediction has {}",
            gold.len(),
            pred.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Config("label set is empty".into()));
    }
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_ref(), i)).collect();
    let lookup = |s: &str| {
        index
            .get(s)
            .copied()
            .ok_or_else(|| Error::Input(format!("label {s:?} is not in the label set")))
    };
    let mut c = vec![(0u64, 0u64, 0u64); labels.len()];
    for (g, p) in gold.iter().zip(pred) {
        let (gi, pi) = (lookup(g.as_ref())?, lookup(p.as_ref())?);
        if gi == pi {
            c[gi].0 += 1;
        } else {
            c[pi].1 += 1;
            c[gi].2 += 1;
        }
    }
    let mut scores = BTreeMap::new();
    let mut support = BTreeMap::new();
    let mut sum = 0.0;
    for (l, &(tp, fp, f)) in labels.iter().zip(&c) {
        let s = f1_percent(tp, fp, f);
        sum += s;
        scores.insert(l.as_ref().to_string(), s);
        support.insert(l.as_ref().to_string(), tp + f);
    }
    Ok((sum / labels.len() as f64, scores, support))
}

pub fn macro_f1<S: AsRef<str>, L: AsRef<str>>(gold: &[S], pred: &[S], labels: &[L]) -> Result<f64> {
    macro_f1_report(gold, pred, labels).map(|r| r.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(v: &[&[&'static str]]) -> Vec<Vec<&'static str>> {
        v.iter().map(|s| s.to_vec()).collect()
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round2(66.666_666), 66.67);
        assert_eq!(round2(73.333_333), 73.33);
        assert_eq!(round2(0.125), 0.13);
        assert_eq!(round2(100.0), 100.0);
    }

    #[test]
    fn micro_f1_fixtures() {
        let gold = seqs(&[&["X", "X", "O", "X"]]);
        let pred = seqs(&[&["X", "X", "X", "O"]]);
        assert_eq!(round2(micro_f1(&gold, &pred).unwrap()), 66.67);
        assert_eq!(micro_f1(&gold, &gold).unwrap(), 100.0);
        let absent = seqs(&[&["Z", "Z", "Z", "Z"]]);
        assert_eq!(micro_f1(&gold, &absent).unwrap(), 0.0);
        assert!(micro_f1(&gold, &seqs(&[&["X"]])).is_err());
    }

    #[test]
    fn spans_are_lenient() {
        let s = bio_spans(&["O", "I-PER", "I-PER", "B-LOC", "I-ORG"]).unwrap();
        let got: Vec<(&str, usize, usize)> = s.iter().map(|s| (s.label.as_str(), s.start, s.end)).collect();
        assert_eq!(got, vec![("PER", 1, 3), ("LOC", 3, 4), ("ORG", 4, 5)]);
        assert!(bio_spans(&["X-PER"]).is_err());
        assert!(bio_spans(&["B-"]).is_err());
    }

    #[test]
    fn entity_f1_fixtures() {
        let gold = seqs(&[&["O", "B-PER", "I-PER", "O"]]);
        assert_eq!(entity_f1(&gold, &gold).unwrap(), 100.0);
        let short = seqs(&[&["O", "B-PER", "O", "O"]]);
        assert_eq!(entity_f1(&gold, &short).unwrap(), 0.0);
        let extra = seqs(&[&["O", "B-PER", "I-PER", "B-LOC"]]);
        assert_eq!(round2(entity_f1(&gold, &extra).unwrap()), 66.67);
        let relabeled = seqs(&[&["O", "I-PER", "I-PER", "O"]]);
        assert_eq!(entity_f1(&gold, &relabeled).unwrap(), 100.0);
    }

    #[test]
    fn macro_f1_fixtures() {
        let labels = ["NOT", "OFF"];
        let gold = ["NOT", "NOT", "OFF", "OFF"];
        let pred = ["NOT", "OFF", "OFF", "OFF"];
        assert_eq!(round2(macro_f1(&gold, &pred, &labels).unwrap()), 73.33);
        assert_eq!(macro_f1(&gold, &gold, &labels).unwrap(), 100.0);
        let one = ["NOT", "NOT"];
        assert_eq!(macro_f1(&one, &one, &labels).unwrap(), 50.0);
        assert!(macro_f1(&["NOT"], &["MAYBE"], &labels).is_err());
    }
}
