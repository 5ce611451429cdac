//! Greedy merge learning over chunk frequencies.
//!
//! Pair counts are kept incrementally: when a merge fires, every chunk that
//! contains the pair has its pair contributions removed, is rewritten, and has
//! the new contributions added back. A lazy max-heap ordered by
//! `(count desc, left asc, right asc)` picks the next merge.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use rayon::prelude::*;

use super::{chunk_ranges, BpeVocab, SpecialTokens, FIRST_BYTE_ID, NUM_SPECIAL_TOKENS};
use crate::error::{Error, Result};

#[derive(Debug, PartialEq, Eq)]
struct Candidate {
    count: u64,
    left: String,
    right: String,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Counts chunk frequencies over a document sample (parallel map, ordered
/// reduce).
pub(crate) fn count_chunks<D: AsRef<[u8]> + Sync>(docs: &[D]) -> Vec<(Vec<u8>, u64)> {
    let merged = docs
        .par_iter()
        .fold(HashMap::<Vec<u8>, u64>::new, |mut acc, d| {
            let text = d.as_ref();
            for r in chunk_ranges(text) {
                *acc.entry(text[r].to_vec()).or_default() += 1;
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });
    let mut chunks: Vec<(Vec<u8>, u64)> = merged.into_iter().collect();
    chunks.sort_unstable();
    chunks
}

/// Learns merges until the vocabulary (bytes + merges + specials) reaches
/// `target_size`, or no eligible pair remains (logged as a warning).
///
/// Ties in pair frequency go to the lexicographically smallest
/// `(left, right)` surface strings. A pair whose concatenation already exists
/// as a token, or equals a special token, is never merged.
pub fn train_vocab<D: AsRef<[u8]> + Sync>(
    sample: &[D],
    target_size: usize,
    specials: SpecialTokens,
) -> Result<BpeVocab> {
    let floor = 256 + NUM_SPECIAL_TOKENS;
    if target_size < floor {
        return Err(Error::Config(format!(
            "target vocabulary size {target_size} is below bytes + specials ({floor})"
        )));
    }
    if sample.is_empty() || sample.iter().all(|d| d.as_ref().is_empty()) {
        return Err(Error::InsufficientData("vocabulary sample is empty".into()));
    }
    let wanted = target_size - floor;
    let chunks = count_chunks(sample);

    let mut tokens: Vec<String> = vec![String::new(); FIRST_BYTE_ID as usize];
    tokens.extend((0..=255u8).map(|b| super::byte_to_char(b).to_string()));
    let mut existing: HashSet<String> = tokens[FIRST_BYTE_ID as usize..].iter().cloned().collect();

    let mut words: Vec<Vec<u32>> = chunks
        .iter()
        .map(|(c, _)| c.iter().map(|&b| FIRST_BYTE_ID + b as u32).collect())
        .collect();
    let counts: Vec<u64> = chunks.iter().map(|(_, n)| *n).collect();

    let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut occurs: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.windows(2) {
            let key = (p[0], p[1]);
            *pair_counts.entry(key).or_default() += counts[wi];
            occurs.entry(key).or_default().insert(wi);
        }
    }

    let candidate = |pair: (u32, u32), count: u64, tokens: &[String]| Candidate {
        count,
        left: tokens[pair.0 as usize].clone(),
        right: tokens[pair.1 as usize].clone(),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .map(|(&p, &c)| candidate(p, c, &tokens))
        .collect();

    let mut merges: Vec<(String, String)> = Vec::with_capacity(wanted);
    while merges.len() < wanted {
        let Some(top) = heap.pop() else {
            break;
        };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current == 0 {
            continue;
        }
        if current != top.count {
            heap.push(candidate(top.pair, current, &tokens));
            continue;
        }
        let merged = format!("{}{}", top.left, top.right);
        if existing.contains(&merged) || specials.contains(&merged) {
            continue;
        }
        let new_id = (FIRST_BYTE_ID as usize + 256 + merges.len()) as u32;
        tokens.push(merged.clone());
        existing.insert(merged);
        merges.push((top.left, top.right));

        let (l, r) = top.pair;
        let mut affected: Vec<usize> = occurs.remove(&top.pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        for wi in affected {
            let w = &words[wi];
            if !w.windows(2).any(|p| p[0] == l && p[1] == r) {
                continue;
            }
            let c = counts[wi];
            for p in w.windows(2) {
                let key = (p[0], p[1]);
                let e = pair_counts.get_mut(&key).expect("pair was counted");
                *e -= c;
                touched.insert(key);
            }
            let mut next = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == l && w[i + 1] == r {
                    next.push(new_id);
                    i += 2;
                } else {
                    next.push(w[i]);
                    i += 1;
                }
            }
            for p in next.windows(2) {
                let key = (p[0], p[1]);
                *pair_counts.entry(key).or_default() += c;
                occurs.entry(key).or_default().insert(wi);
                touched.insert(key);
            }
            words[wi] = next;
        }
        let mut touched: Vec<(u32, u32)> = touched.into_iter().collect();
        touched.sort_unstable();
        for key in touched {
            match pair_counts.get(&key).copied() {
                Some(0) => {
                    pair_counts.remove(&key);
                }
                Some(c) => heap.push(candidate(key, c, &tokens)),
                None => {}
            }
        }
    }
    if merges.len() < wanted {
        log::warn!(
            "sample exhausted mergeable pairs after {} of {} merges; vocabulary has {} entries",
            merges.len(),
            wanted,
            floor + merges.len()
        );
    }
    BpeVocab::from_merges(merges, specials)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let v = train_vocab(&["aaab aaab"], 256 + NUM_SPECIAL_TOKENS + 1, SpecialTokens::default()).unwrap();
        assert_eq!(v.merges(), &[("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn zero_merge_budget_gives_bytes_and_specials() {
        let v = train_vocab(&["zzzzzz"], 256 + NUM_SPECIAL_TOKENS, SpecialTokens::default()).unwrap();
        assert!(v.merges().is_empty());
        assert_eq!(v.len(), 256 + NUM_SPECIAL_TOKENS);
    }

    #[test]
    fn rejects_small_targets_and_empty_samples() {
        assert!(matches!(
            train_vocab(&["abc"], 100, SpecialTokens::default()),
            Err(Error::Config(_))
        ));
        let empty: [&str; 0] = [];
        assert!(matches!(
            train_vocab(&empty, 300, SpecialTokens::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn exhausting_pairs_stops_early() {
        let v = train_vocab(&["ab"], 400, SpecialTokens::default()).unwrap();
        assert_eq!(v.merges().len(), 1);
    }

    #[test]
    fn ties_break_lexicographically() {
        // "ab" and "cd" each occur once; ("a","b") sorts first.
        let v = train_vocab(&["ab cd"], 256 + NUM_SPECIAL_TOKENS + 1, SpecialTokens::default()).unwrap();
        assert_eq!(v.merges()[0], ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn merges_never_produce_special_strings() {
        let v = train_vocab(&["<s> <s> <s>"], 300, SpecialTokens::default()).unwrap();
        assert!(v.merges().iter().all(|(l, r)| format!("{l}{r}") != "<s>"));
    }
}
