use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bpe::{chunk_ranges, BpeVocab};
use crate::error::{Error, Result};

/// Encodes documents without specials, memoising repeated chunks.
pub fn encode_documents<D: AsRef<[u8]>>(vocab: &BpeVocab, docs: &[D]) -> Vec<Vec<u32>> {
    let mut cache: HashMap<Vec<u8>, Vec<u32>> = HashMap::new();
    docs.iter()
        .map(|d| {
            let text = d.as_ref();
            let mut ids = Vec::with_capacity(text.len() / 3 + 1);
            for r in chunk_ranges(text) {
                let chunk = &text[r];
                if let Some(hit) = cache.get(chunk) {
                    ids.extend_from_slice(hit);
                } else {
                    let enc = vocab.encode_chunk(chunk);
                    ids.extend_from_slice(&enc);
                    cache.insert(chunk.to_vec(), enc);
                }
            }
            ids
        })
        .collect()
}

/// Fixed-length training blocks cut from one contiguous token stream.
///
/// Documents are joined with `eos`, the stream is cut every `seq_len - 2`
/// tokens regardless of document boundaries, and each block is wrapped in
/// `bos ... eos`. The final block may be shorter.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedBlocks {
    pub seq_len: usize,
    pub blocks: Vec<Vec<u32>>,
    /// Number of stream tokens (document tokens plus separators).
    pub stream_tokens: usize,
}

impl PackedBlocks {
    pub fn pack(docs: &[Vec<u32>], seq_len: usize, bos: u32, eos: u32) -> Result<Self> {
        if seq_len < 3 {
            return Err(Error::Config(format!("seq_len {seq_len} leaves no room between bos and eos")));
        }
        let mut stream = Vec::with_capacity(docs.iter().map(|d| d.len() + 1).sum());
        for (i, d) in docs.iter().enumerate() {
            if i > 0 {
                stream.push(eos);
            }
            stream.extend_from_slice(d);
        }
        if stream.is_empty() {
            return Err(Error::InsufficientData("corpus encodes to zero tokens".into()));
        }
        let body = seq_len - 2;
        let blocks = stream
            .chunks(body)
            .map(|c| {
                let mut b = Vec::with_capacity(c.len() + 2);
                b.push(bos);
                b.extend_from_slice(c);
                b.push(eos);
                b
            })
            .collect();
        Ok(PackedBlocks {
            seq_len,
            blocks,
            stream_tokens: stream.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Maps global update indices onto per-epoch shuffled block orders.
#[derive(Debug, Clone)]
pub struct EpochPlan {
    pub num_blocks: usize,
    pub sequences_per_update: usize,
    pub seed: u64,
}

impl EpochPlan {
    pub fn updates_per_epoch(&self) -> u64 {
        self.num_blocks.div_ceil(self.sequences_per_update) as u64
    }

    pub fn epoch_of(&self, step: u64) -> u64 {
        step / self.updates_per_epoch()
    }

    pub fn order(&self, epoch: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.num_blocks).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xB10C_0000);
        rng.set_stream(epoch);
        idx.shuffle(&mut rng);
        idx
    }

    /// Block indices consumed by update `step`; the last update of an epoch
    /// may be short.
    pub fn blocks_for(&self, step: u64, order: &[usize]) -> Vec<usize> {
        let within = (step % self.updates_per_epoch()) as usize;
        let start = within * self.sequences_per_update;
        let end = (start + self.sequences_per_update).min(self.num_blocks);
        order[start..end].to_vec()
    }
}
