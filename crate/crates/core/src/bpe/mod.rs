//! Byte-level BPE: vocabulary, lossless encode/decode and merges/vocab files.
//!
//! Id layout: `<s>`=0, `<pad>`=1, `</s>`=2, `<unk>`=3, the 256 byte tokens
//! (byte `b` has id `4 + b`), merge results in priority order, and `<mask>`
//! as the last id.

mod bytes;
mod chunk;
mod trainer;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bytes::{byte_to_char, bytes_to_unicode, char_to_byte};
pub use chunk::{chunk_ranges, is_split_whitespace};
pub use trainer::train_vocab;

use crate::error::{Error, Result};

pub const BOS_ID: u32 = 0;
pub const PAD_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const NUM_SPECIAL_TOKENS: usize = 5;
/// Id of the byte token for byte 0.
pub const FIRST_BYTE_ID: u32 = 4;
/// Id of the first merge result.
pub const FIRST_MERGE_ID: u32 = FIRST_BYTE_ID + 256;

pub const MERGES_HEADER: &str = "#version: 0.2";
pub const VOCAB_FILE: &str = "vocab.json";
pub const MERGES_FILE: &str = "merges.txt";

/// Surface strings of the special tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub bos: String,
    pub pad: String,
    pub eos: String,
    pub unk: String,
    pub mask: String,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        SpecialTokens {
            bos: "<s>".into(),
            pad: "<pad>".into(),
            eos: "</s>".into(),
            unk: "<unk>".into(),
            mask: "<mask>".into(),
        }
    }
}

impl SpecialTokens {
    fn in_id_order(&self) -> [&str; 4] {
        [&self.bos, &self.pad, &self.eos, &self.unk]
    }

    pub fn contains(&self, s: &str) -> bool {
        self.in_id_order().contains(&s) || self.mask == s
    }

    fn validate(&self) -> Result<()> {
        let all = [&self.bos, &self.pad, &self.eos, &self.unk, &self.mask];
        for (i, a) in all.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::Config("special token strings must be non-empty".into()));
            }
            if all[i + 1..].contains(a) {
                return Err(Error::Config(format!("special token {a} is declared twice")));
            }
            if a.chars().count() == 1 && char_to_byte(a.chars().next().unwrap()).is_some() {
                return Err(Error::Config(format!("special token {a} collides with a byte token")));
            }
        }
        Ok(())
    }
}

/// Output of [`BpeVocab::encode`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    /// Byte range of each token in the source; specials get empty ranges.
    pub offsets: Vec<(usize, usize)>,
}

/// The complete tokenizer state.
#[derive(Debug, Clone)]
pub struct BpeVocab {
    specials: SpecialTokens,
    merges: Vec<(String, String)>,
    tokens: Vec<String>,
    token_to_id: HashMap<String, u32>,
    token_bytes: Vec<Vec<u8>>,
    /// `(left, right) -> (rank, merged id)`.
    merge_ranks: HashMap<(u32, u32), (u32, u32)>,
}

impl PartialEq for BpeVocab {
    fn eq(&self, other: &Self) -> bool {
        self.specials == other.specials && self.merges == other.merges
    }
}

impl BpeVocab {
    /// Builds a vocabulary from an ordered merge list.
    ///
    /// Each merge's operands must already exist, and its result must be a new
    /// string that is not a special token.
    pub fn from_merges(merges: Vec<(String, String)>, specials: SpecialTokens) -> Result<Self> {
        specials.validate()?;
        let mut tokens: Vec<String> = specials.in_id_order().iter().map(|s| s.to_string()).collect();
        let mut token_bytes: Vec<Vec<u8>> = vec![Vec::new(); 4];
        for b in 0..=255u8 {
            tokens.push(byte_to_char(b).to_string());
            token_bytes.push(vec![b]);
        }
        let mut token_to_id: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let mut merge_ranks = HashMap::with_capacity(merges.len());
        for (rank, (l, r)) in merges.iter().enumerate() {
            let lookup = |s: &str| {
                token_to_id
                    .get(s)
                    .copied()
                    .filter(|&id| id >= FIRST_BYTE_ID)
                    .ok_or_else(|| Error::Config(format!("merge {} uses unknown operand {s:?}", rank + 1)))
            };
            let (li, ri) = (lookup(l)?, lookup(r)?);
            let merged = format!("{l}{r}");
            if token_to_id.contains_key(&merged) || specials.contains(&merged) {
                return Err(Error::Config(format!(
                    "merge {} produces an existing token {merged:?}",
                    rank + 1
                )));
            }
            let id = tokens.len() as u32;
            let mut bytes = token_bytes[li as usize].clone();
            bytes.extend_from_slice(&token_bytes[ri as usize]);
            token_bytes.push(bytes);
            tokens.push(merged.clone());
            token_to_id.insert(merged, id);
            merge_ranks.insert((li, ri), (rank as u32, id));
        }
        let mask_id = tokens.len() as u32;
        tokens.push(specials.mask.clone());
        token_bytes.push(Vec::new());
        token_to_id.insert(specials.mask.clone(), mask_id);
        Ok(BpeVocab {
            specials,
            merges,
            tokens,
            token_to_id,
            token_bytes,
            merge_ranks,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn specials(&self) -> &SpecialTokens {
        &self.specials
    }

    pub fn bos_id(&self) -> u32 {
        BOS_ID
    }

    pub fn pad_id(&self) -> u32 {
        PAD_ID
    }

    pub fn eos_id(&self) -> u32 {
        EOS_ID
    }

    pub fn unk_id(&self) -> u32 {
        UNK_ID
    }

    pub fn mask_id(&self) -> u32 {
        (self.tokens.len() - 1) as u32
    }

    pub fn is_special(&self, id: u32) -> bool {
        id < FIRST_BYTE_ID || id == self.mask_id()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Vocabulary restricted to its first `k` merges.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        Self::from_merges(self.merges[..k.min(self.merges.len())].to_vec(), self.specials.clone())
    }

    /// Applies merges in priority order within each whitespace chunk.
    pub fn encode(&self, text: &[u8], add_specials: bool) -> Encoding {
        let mut ids = Vec::with_capacity(text.len() / 2 + 2);
        let mut offsets = Vec::with_capacity(text.len() / 2 + 2);
        if add_specials {
            ids.push(BOS_ID);
            offsets.push((0, 0));
        }
        for range in chunk_ranges(text) {
            let start = range.start;
            let mut pos = start;
            for id in self.encode_chunk(&text[range]) {
                let len = self.token_bytes[id as usize].len();
                ids.push(id);
                offsets.push((pos, pos + len));
                pos += len;
            }
        }
        if add_specials {
            ids.push(EOS_ID);
            offsets.push((text.len(), text.len()));
        }
        Encoding { ids, offsets }
    }

    /// Token ids for one chunk, without specials.
    pub fn encode_chunk(&self, chunk: &[u8]) -> Vec<u32> {
        let mut symbols: Vec<u32> = chunk.iter().map(|&b| FIRST_BYTE_ID + b as u32).collect();
        loop {
            let mut best: Option<(u32, u32, u32, u32)> = None;
            for w in symbols.windows(2) {
                if let Some(&(rank, id)) = self.merge_ranks.get(&(w[0], w[1])) {
                    if best.is_none_or(|b| rank < b.0) {
                        best = Some((rank, id, w[0], w[1]));
                    }
                }
            }
            let Some((_, new_id, l, r)) = best else {
                break;
            };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == l && symbols[i + 1] == r {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    /// Maps ids back to raw bytes, dropping special tokens.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(ids.len() * 2);
        for &id in ids {
            let bytes = self
                .token_bytes
                .get(id as usize)
                .ok_or(Error::UnknownTokenId(id))?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// Raw bytes of one token (empty for specials).
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.token_bytes.get(id as usize).map(Vec::as_slice)
    }

    /// Canonical `vocab.json`: a JSON object from token to id, ordered by id.
    pub fn vocab_json(&self) -> String {
        let mut s = String::from("{\n");
        for (i, t) in self.tokens.iter().enumerate() {
            let key = serde_json::to_string(t).expect("strings always serialize");
            let sep = if i + 1 == self.tokens.len() { "" } else { "," };
            let _ = writeln!(s, "  {key}: {i}{sep}");
        }
        s.push_str("}\n");
        s
    }

    /// `merges.txt`: header line, then `left right` per merge.
    pub fn merges_txt(&self) -> String {
        let mut s = String::from(MERGES_HEADER);
        s.push('\n');
        for (l, r) in &self.merges {
            let _ = writeln!(s, "{l} {r}");
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let v = dir.join(VOCAB_FILE);
        fs::write(&v, self.vocab_json()).map_err(|e| Error::io(&v, e))?;
        let m = dir.join(MERGES_FILE);
        fs::write(&m, self.merges_txt()).map_err(|e| Error::io(&m, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = dir.join(MERGES_FILE);
        let merges_text = fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
        let v = dir.join(VOCAB_FILE);
        let vocab_text = fs::read_to_string(&v).map_err(|e| Error::io(&v, e))?;
        Self::from_files(&vocab_text, &merges_text)
    }

    pub fn from_files(vocab_json: &str, merges_txt: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (i, line) in merges_txt.lines().enumerate() {
            if i == 0 && line.starts_with("#version") {
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (l, r) = line.split_once(' ').ok_or_else(|| Error::Parse {
                path: MERGES_FILE.into(),
                line: i + 1,
                message: "expected two space-separated subwords".into(),
            })?;
            merges.push((l.to_string(), r.to_string()));
        }
        let map: HashMap<String, u32> = serde_json::from_str(vocab_json)?;
        let mut by_id: Vec<(u32, String)> = map.into_iter().map(|(k, v)| (v, k)).collect();
        by_id.sort();
        if by_id.len() < NUM_SPECIAL_TOKENS + 256 {
            return Err(Error::Config("vocab.json is too small".into()));
        }
        let name = |i: usize| by_id[i].1.clone();
        let specials = SpecialTokens {
            bos: name(BOS_ID as usize),
            pad: name(PAD_ID as usize),
            eos: name(EOS_ID as usize),
            unk: name(UNK_ID as usize),
            mask: name(by_id.len() - 1),
        };
        let vocab = Self::from_merges(merges, specials)?;
        let consistent = by_id.len() == vocab.len()
            && by_id
                .iter()
                .enumerate()
                .all(|(i, (id, t))| *id as usize == i && vocab.tokens[i] == *t);
        if !consistent {
            return Err(Error::Config(
                "vocab.json does not agree with merges.txt".into(),
            ));
        }
        Ok(vocab)
    }
}
