//! Independent reference implementations used as test oracles. They favour
//! obviously-correct brute force over speed.

#![allow(dead_code)]

pub mod gradcheck;

use std::collections::{BTreeMap, HashMap, HashSet};

use mlm_core::bpe::byte_to_char;

fn is_ws(b: u8) -> bool {
    b" \t\n\r\x0b\x0c".contains(&b)
}

/// Whitespace chunking re-derived from its rule: words keep one directly
/// preceding space, every other whitespace run stands alone.
pub fn oracle_chunks(text: &[u8]) -> Vec<Vec<u8>> {
    let mut groups: Vec<(bool, Vec<u8>)> = Vec::new();
    for &b in text {
        match groups.last_mut() {
            Some((ws, g)) if *ws == is_ws(b) => g.push(b),
            _ => groups.push((is_ws(b), vec![b])),
        }
    }
    let mut out = Vec::new();
    let mut carry: Option<u8> = None;
    for (i, (ws, g)) in groups.iter().enumerate() {
        if *ws {
            let next_is_word = i + 1 < groups.len();
            if next_is_word && *g.last().unwrap() == b' ' {
                if g.len() > 1 {
                    out.push(g[..g.len() - 1].to_vec());
                }
                carry = Some(b' ');
            } else {
                out.push(g.clone());
            }
        } else {
            let mut w = Vec::new();
            w.extend(carry.take());
            w.extend_from_slice(g);
            out.push(w);
        }
    }
    out
}

pub const SPECIAL_STRINGS: [&str; 5] = ["<s>", "<pad>", "</s>", "<unk>", "<mask>"];

/// BPE training that recounts every adjacent pair from scratch after each
/// merge. Returns the merge list and the final segmentation of each chunk.
pub fn oracle_bpe(corpus: &[Vec<u8>], merges_wanted: usize) -> (Vec<(String, String)>, HashMap<Vec<u8>, Vec<String>>) {
    let mut freq: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for doc in corpus {
        for c in oracle_chunks(doc) {
            *freq.entry(c).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<u8>, Vec<String>, u64)> = freq
        .into_iter()
        .map(|(c, n)| {
            let syms = c.iter().map(|&b| byte_to_char(b).to_string()).collect();
            (c, syms, n)
        })
        .collect();
    let mut known: HashSet<String> = (0..=255u8).map(|b| byte_to_char(b).to_string()).collect();
    let mut merges = Vec::new();
    while merges.len() < merges_wanted {
        let mut counts: HashMap<(String, String), u64> = HashMap::new();
        for (_, syms, n) in &words {
            for w in syms.windows(2) {
                *counts.entry((w[0].clone(), w[1].clone())).or_default() += n;
            }
        }
        let best = counts
            .into_iter()
            .filter(|((l, r), _)| {
                let m = format!("{l}{r}");
                !known.contains(&m) && !SPECIAL_STRINGS.contains(&m.as_str())
            })
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((l, r), _)) = best else { break };
        let merged = format!("{l}{r}");
        for (_, syms, _) in words.iter_mut() {
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            *syms = out;
        }
        known.insert(merged);
        merges.push((l, r));
    }
    let segmentation = words.into_iter().map(|(c, s, _)| (c, s)).collect();
    (merges, segmentation)
}

fn f1(tp: u64, pred_pos: u64, gold_pos: u64) -> f64 {
    if pred_pos + gold_pos == 0 {
        0.0
    } else {
        200.0 * tp as f64 / (pred_pos + gold_pos) as f64
    }
}

/// Micro F1 from a full confusion matrix, ignoring "O".
pub fn oracle_micro_f1(gold: &[Vec<String>], pred: &[Vec<String>]) -> f64 {
    let mut conf: HashMap<(&str, &str), u64> = HashMap::new();
    for (g, p) in gold.iter().zip(pred) {
        for (a, b) in g.iter().zip(p) {
            *conf.entry((a.as_str(), b.as_str())).or_default() += 1;
        }
    }
    let tp: u64 = conf.iter().filter(|((g, p), _)| g == p && *g != "O").map(|(_, n)| n).sum();
    let pred_pos: u64 = conf.iter().filter(|((_, p), _)| *p != "O").map(|(_, n)| n).sum();
    let gold_pos: u64 = conf.iter().filter(|((g, _), _)| *g != "O").map(|(_, n)| n).sum();
    if pred_pos + gold_pos == 0 {
        100.0
    } else {
        f1(tp, pred_pos, gold_pos)
    }
}

/// Spans as (label, start, end): a span starts at every B-X, and at an I-X
/// whose predecessor is not B-X or I-X; it runs over the following I-X tags.
pub fn oracle_spans(tags: &[String]) -> Vec<(String, usize, usize)> {
    let label = |t: &str| t[2..].to_string();
    let mut spans = Vec::new();
    for i in 0..tags.len() {
        let t = &tags[i];
        if t == "O" {
            continue;
        }
        let x = label(t);
        let starts = t.starts_with("B-") || i == 0 || tags[i - 1] == "O" || label(&tags[i - 1]) != x;
        if !starts {
            continue;
        }
        let mut end = i + 1;
        while end < tags.len() && tags[end] == format!("I-{x}") {
            end += 1;
        }
        spans.push((x, i, end));
    }
    spans
}

pub fn oracle_entity_f1(gold: &[Vec<String>], pred: &[Vec<String>]) -> f64 {
    let (mut tp, mut ng, mut np) = (0u64, 0u64, 0u64);
    for (g, p) in gold.iter().zip(pred) {
        let gs = oracle_spans(g);
        let ps = oracle_spans(p);
        ng += gs.len() as u64;
        np += ps.len() as u64;
        for s in &gs {
            if ps.iter().any(|q| q == s) {
                tp += 1;
            }
        }
    }
    if ng + np == 0 {
        100.0
    } else {
        f1(tp, np, ng)
    }
}

pub fn oracle_macro_f1(gold: &[String], pred: &[String], labels: &[String]) -> f64 {
    let mut sum = 0.0;
    for l in labels {
        let tp = gold.iter().zip(pred).filter(|(g, p)| *g == l && *p == l).count() as u64;
        let pp = pred.iter().filter(|p| *p == l).count() as u64;
        let gp = gold.iter().filter(|g| *g == l).count() as u64;
        sum += f1(tp, pp, gp);
    }
    sum / labels.len() as f64
}
