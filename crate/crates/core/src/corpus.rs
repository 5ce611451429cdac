//! Corpus ingestion: strict UTF-8 filtering, seeded shuffling into shards,
//! vocabulary sampling and train/validation splitting.
//!
//! Records are newline-delimited JSON objects `{"id", "text", "source"}`,
//! optionally gzip-compressed. Documents whose text is not well-formed UTF-8
//! are dropped whole; nothing else is cleaned.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "mc4-like")]
    Mc4Like,
    #[serde(rename = "oscar-like")]
    OscarLike,
    #[serde(rename = "wiki-like")]
    WikiLike,
    #[default]
    #[serde(rename = "other", other)]
    Other,
}

/// An unfiltered record; `text` may hold any bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    #[serde(with = "serde_bytes")]
    pub text: Vec<u8>,
    #[serde(default)]
    pub source: Source,
}

/// A record that passed the encoding filter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub source: Source,
}

impl Document {
    pub fn byte_len(&self) -> usize {
        self.text.len()
    }
}

impl AsRef<[u8]> for Document {
    fn as_ref(&self) -> &[u8] {
        self.text.as_bytes()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub kept: u64,
    pub dropped_invalid_encoding: u64,
}

impl FilterStats {
    fn merge(self, other: FilterStats) -> FilterStats {
        FilterStats {
            kept: self.kept + other.kept,
            dropped_invalid_encoding: self.dropped_invalid_encoding + other.dropped_invalid_encoding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    /// Shard files, relative to the manifest's directory.
    pub shards: Vec<PathBuf>,
    pub total_bytes: u64,
    pub documents: u64,
    pub seed: u64,
    pub filter_stats: FilterStats,
}

/// Keeps a record iff its text is well-formed UTF-8.
pub fn filter_record(record: RawRecord) -> Option<Document> {
    let RawRecord { id, text, source } = record;
    String::from_utf8(text).ok().map(|text| Document { id, text, source })
}

/// Applies [`filter_record`] to every record, counting drops. Fails with
/// [`Error::EmptyCorpus`] if nothing survives.
pub fn filter_documents<I>(records: I) -> Result<(Vec<Document>, FilterStats)>
where
    I: IntoIterator<Item = RawRecord>,
{
    let mut stats = FilterStats::default();
    let mut kept = Vec::new();
    for r in records {
        match filter_record(r) {
            Some(d) => {
                stats.kept += 1;
                kept.push(d);
            }
            None => stats.dropped_invalid_encoding += 1,
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok((kept, stats))
}

fn open_maybe_gzip(path: &Path) -> Result<Box<dyn BufRead>> {
    let ingest = |e: std::io::Error| Error::Ingestion {
        shard: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut f = fs::File::open(path).map_err(ingest)?;
    let mut magic = [0u8; 2];
    let n = f.read(&mut magic).map_err(ingest)?;
    let f = fs::File::open(path).map_err(ingest)?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(f))))
    } else {
        Ok(Box::new(BufReader::new(f)))
    }
}

/// Reads every record of one record file. Blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<RawRecord>> {
    let mut reader = open_maybe_gzip(path)?;
    let mut out = Vec::new();
    let mut line = Vec::new();
    let mut lineno = 0usize;
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line).map_err(|e| Error::Ingestion {
            shard: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let body = line.trim_ascii();
        if body.is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_slice(body).map_err(|e| Error::Ingestion {
            shard: path.to_path_buf(),
            message: format!("line {lineno}: {e}"),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads and filters several record files. Files are processed in parallel and
/// merged in input order.
pub fn ingest_files(paths: &[PathBuf]) -> Result<(Vec<Document>, FilterStats)> {
    let per_file: Vec<(Vec<Document>, FilterStats)> = paths
        .par_iter()
        .map(|p| {
            let mut stats = FilterStats::default();
            let mut docs = Vec::new();
            for r in read_records(p)? {
                match filter_record(r) {
                    Some(d) => {
                        stats.kept += 1;
                        docs.push(d);
                    }
                    None => stats.dropped_invalid_encoding += 1,
                }
            }
            Ok((docs, stats))
        })
        .collect::<Result<_>>()?;
    let mut docs = Vec::new();
    let mut stats = FilterStats::default();
    for (d, s) in per_file {
        docs.extend(d);
        stats = stats.merge(s);
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok((docs, stats))
}

/// Seeded Fisher-Yates permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Shuffles documents and packs them greedily: a shard is closed as soon as
/// it holds at least `shard_bytes` bytes.
pub fn shuffle_and_pack(docs: Vec<Document>, seed: u64, shard_bytes: u64) -> Result<Vec<Vec<Document>>> {
    if shard_bytes == 0 {
        return Err(Error::Config("shard_bytes must be positive".into()));
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let order = permutation(docs.len(), seed);
    let mut slots: Vec<Option<Document>> = docs.into_iter().map(Some).collect();
    let mut shards = Vec::new();
    let mut current = Vec::new();
    let mut bytes = 0u64;
    for i in order {
        let d = slots[i].take().expect("permutation visits each index once");
        bytes += d.byte_len() as u64;
        current.push(d);
        if bytes >= shard_bytes {
            shards.push(std::mem::take(&mut current));
            bytes = 0;
        }
    }
    if !current.is_empty() {
        shards.push(current);
    }
    Ok(shards)
}

fn write_shard(path: &Path, docs: &[Document]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Shuffles, packs and writes shards plus `manifest.json` under `out_dir`.
pub fn shuffle_and_shard(
    docs: Vec<Document>,
    seed: u64,
    shard_bytes: u64,
    filter_stats: FilterStats,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    let shards = shuffle_and_pack(docs, seed, shard_bytes)?;
    write_manifest_and_shards(&shards, seed, filter_stats, out_dir)
}

pub fn write_manifest_and_shards(
    shards: &[Vec<Document>],
    seed: u64,
    filter_stats: FilterStats,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut names = Vec::with_capacity(shards.len());
    let mut total_bytes = 0u64;
    let mut documents = 0u64;
    for (i, shard) in shards.iter().enumerate() {
        let name = PathBuf::from(format!("shard-{i:05}.jsonl"));
        write_shard(&out_dir.join(&name), shard)?;
        total_bytes += shard.iter().map(|d| d.byte_len() as u64).sum::<u64>();
        documents += shard.len() as u64;
        names.push(name);
    }
    let manifest = CorpusManifest {
        shards: names,
        total_bytes,
        documents,
        seed,
        filter_stats,
    };
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Accepts either a manifest file or a directory containing one.
pub fn resolve_manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let path = resolve_manifest_path(path);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads a manifest and all of its documents in shard order.
pub fn load_corpus(path: &Path) -> Result<(CorpusManifest, Vec<Document>)> {
    let path = resolve_manifest_path(path);
    let manifest = load_manifest(&path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut docs = Vec::with_capacity(manifest.documents as usize);
    for shard in &manifest.shards {
        let p = dir.join(shard);
        for r in read_records(&p)? {
            let d = filter_record(r).ok_or_else(|| Error::Ingestion {
                shard: p.clone(),
                message: "shard contains a document with invalid UTF-8".into(),
            })?;
            docs.push(d);
        }
    }
    let bytes: u64 = docs.iter().map(|d| d.byte_len() as u64).sum();
    if bytes != manifest.total_bytes || docs.len() as u64 != manifest.documents {
        return Err(Error::Ingestion {
            shard: path.clone(),
            message: format!(
                "manifest lists {} documents / {} bytes, shards hold {} / {}",
                manifest.documents,
                manifest.total_bytes,
                docs.len(),
                bytes
            ),
        });
    }
    Ok((manifest, docs))
}

/// Seeded uniform sample whose cumulative size is the first prefix of a
/// random permutation reaching `target_bytes`.
pub fn sample_for_vocab(docs: &[Document], target_bytes: u64, seed: u64) -> Result<Vec<&Document>> {
    let total: u64 = docs.iter().map(|d| d.byte_len() as u64).sum();
    if target_bytes > total {
        return Err(Error::InsufficientData(format!(
            "asked for {target_bytes} bytes but the corpus holds {total}"
        )));
    }
    let mut out = Vec::new();
    let mut acc = 0u64;
    for i in permutation(docs.len(), seed) {
        if acc >= target_bytes {
            break;
        }
        acc += docs[i].byte_len() as u64;
        out.push(&docs[i]);
    }
    Ok(out)
}

/// Splits off the trailing `fraction` of a seeded permutation as validation.
pub fn split_validation(docs: Vec<Document>, fraction: f64, seed: u64) -> Result<(Vec<Document>, Vec<Document>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("validation fraction {fraction} must lie in [0, 1)")));
    }
    let n = docs.len();
    let n_valid = ((n as f64) * fraction).round() as usize;
    if fraction > 0.0 && (n_valid == 0 || n_valid == n) {
        return Err(Error::InsufficientData(format!(
            "cannot split {n} documents into non-empty train and validation sets"
        )));
    }
    let order = permutation(n, seed ^ 0x5eed_5eed);
    let mut slots: Vec<Option<Document>> = docs.into_iter().map(Some).collect();
    let mut train = Vec::with_capacity(n - n_valid);
    let mut valid = Vec::with_capacity(n_valid);
    for (rank, i) in order.into_iter().enumerate() {
        let d = slots[i].take().unwrap();
        if rank < n - n_valid {
            train.push(d);
        } else {
            valid.push(d);
        }
    }
    Ok((train, valid))
}
