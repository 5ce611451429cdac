use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalx::OUTSIDE_TAG;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TokenTagging,
    SpanNer,
    SequenceClassification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MicroF1,
    EntityF1,
    MacroF1,
}

impl TaskKind {
    pub fn metric(self) -> Metric {
        match self {
            TaskKind::TokenTagging => Metric::MicroF1,
            TaskKind::SpanNer => Metric::EntityF1,
            TaskKind::SequenceClassification => Metric::MacroF1,
        }
    }

    pub fn is_token_level(self) -> bool {
        !matches!(self, TaskKind::SequenceClassification)
    }
}

/// One sentence with a label per word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSequence {
    pub words: Vec<String>,
    pub labels: Vec<String>,
}

/// One text with a single class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledText {
    pub id: String,
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dataset {
    Tokens(Vec<LabeledSequence>),
    Texts(Vec<LabeledText>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Tokens(v) => v.len(),
            Dataset::Texts(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every label used, sorted.
    pub fn labels(&self) -> BTreeSet<String> {
        match self {
            Dataset::Tokens(v) => v.iter().flat_map(|s| s.labels.iter().cloned()).collect(),
            Dataset::Texts(v) => v.iter().map(|t| t.label.clone()).collect(),
        }
    }

    /// Seeded split of `fraction` of the items into a second dataset.
    pub fn holdout(self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        let k = ((n as f64) * fraction).round().max(1.0) as usize;
        if k >= n {
            return Err(Error::InsufficientData(format!("cannot hold out {k} of {n} examples")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xDE5));
        let held: BTreeSet<usize> = idx[..k].iter().copied().collect();
        fn split<T>(v: Vec<T>, held: &BTreeSet<usize>) -> (Vec<T>, Vec<T>) {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (i, x) in v.into_iter().enumerate() {
                if held.contains(&i) {
                    b.push(x);
                } else {
                    a.push(x);
                }
            }
            (a, b)
        }
        Ok(match self {
            Dataset::Tokens(v) => {
                let (a, b) = split(v, &held);
                (Dataset::Tokens(a), Dataset::Tokens(b))
            }
            Dataset::Texts(v) => {
                let (a, b) = split(v, &held);
                (Dataset::Texts(a), Dataset::Texts(b))
            }
        })
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn check_label(path: &Path, line: usize, label: &str, kind: TaskKind, label_set: Option<&[String]>) -> Result<()> {
    if let Some(set) = label_set {
        if !set.iter().any(|l| l == label) {
            return Err(parse_err(path, line, format!("label {label:?} is not in the label set")));
        }
    }
    if kind == TaskKind::SpanNer && label != OUTSIDE_TAG {
        let ok = label
            .split_once('-')
            .is_some_and(|(p, t)| (p == "B" || p == "I") && !t.is_empty());
        if !ok {
            return Err(parse_err(path, line, format!("{label:?} is not a BIO tag")));
        }
    }
    Ok(())
}

/// Parses a token-level file: CoNLL-U (form and UPOS columns) or two-column
/// `token<TAB>tag` text, sentences separated by blank lines.
fn load_tokens(path: &Path, text: &str, kind: TaskKind, label_set: Option<&[String]>) -> Result<Vec<LabeledSequence>> {
    let mut out = Vec::new();
    let mut cur = LabeledSequence {
        words: Vec::new(),
        labels: Vec::new(),
    };
    let flush = |cur: &mut LabeledSequence, out: &mut Vec<LabeledSequence>| {
        if !cur.words.is_empty() {
            out.push(std::mem::replace(
                cur,
                LabeledSequence {
                    words: Vec::new(),
                    labels: Vec::new(),
                },
            ));
        }
    };
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut cur, &mut out);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let (word, tag) = if cols.len() == 10 {
            let id = cols[0];
            if id.contains('-') || id.contains('.') {
                continue;
            }
            if id.parse::<usize>().is_err() {
                return Err(parse_err(path, lineno, format!("bad token id {id:?}")));
            }
            (cols[1], cols[3])
        } else if cols.len() == 2 {
            (cols[0], cols[1])
        } else {
            let ws: Vec<&str> = line.split_whitespace().collect();
            if ws.len() != 2 {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected `token<TAB>tag` or 10 CoNLL-U columns, found {} fields", cols.len()),
                ));
            }
            (ws[0], ws[1])
        };
        if word.is_empty() || tag.is_empty() {
            return Err(parse_err(path, lineno, "empty token or tag"));
        }
        check_label(path, lineno, tag, kind, label_set)?;
        cur.words.push(word.to_string());
        cur.labels.push(tag.to_string());
    }
    flush(&mut cur, &mut out);
    Ok(out)
}

/// Parses `id<TAB>text<TAB>label` lines; an optional `id text label` header
/// is skipped.
fn load_texts(path: &Path, text: &str, label_set: Option<&[String]>) -> Result<Vec<LabeledText>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(path, lineno, format!("expected 3 tab-separated columns, found {}", cols.len())));
        }
        if i == 0 && cols[0] == "id" && cols[2] == "label" {
            continue;
        }
        check_label(path, lineno, cols[2], TaskKind::SequenceClassification, label_set)?;
        out.push(LabeledText {
            id: cols[0].to_string(),
            text: cols[1].to_string(),
            label: cols[2].to_string(),
        });
    }
    Ok(out)
}

/// Reads a dataset file. Labels are checked against `label_set` when given.
pub fn load_dataset(path: &Path, kind: TaskKind, label_set: Option<&[String]>) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(if kind.is_token_level() {
        Dataset::Tokens(load_tokens(path, &text, kind, label_set)?)
    } else {
        Dataset::Texts(load_texts(path, &text, label_set)?)
    })
}

/// Writes sentences as two-column `token<TAB>tag` text.
pub fn write_token_file(path: &Path, sentences: &[LabeledSequence]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for s in sentences {
        for (w, l) in s.words.iter().zip(&s.labels) {
            writeln!(f, "{w}\t{l}").map_err(|e| Error::io(path, e))?;
        }
        writeln!(f).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn write_text_file(path: &Path, items: &[LabeledText]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for t in items {
        writeln!(f, "{}\t{}\t{}", t.id, t.text, t.label).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn two_column_file_with_three_sentences() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.txt", "Ben\tPRON\ngeldim\tVERB\n\nO\tPRON\n\nev\tNOUN\n.\tPUNCT\n");
        let Dataset::Tokens(s) = load_dataset(&p, TaskKind::TokenTagging, None).unwrap() else {
            panic!()
        };
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].words, vec!["Ben", "geldim"]);
        assert_eq!(s[2].labels, vec!["NOUN", "PUNCT"]);
    }

    #[test]
    fn conllu_uses_form_and_upos() {
        let dir = tempfile::tempdir().unwrap();
        let body = "# sent_id = 1\n1-2\tEvde\t_\t_\t_\t_\t_\t_\t_\t_\n1\tEv\tev\tNOUN\t_\t_\t0\troot\t_\t_\n2\tde\tde\tADP\t_\t_\t1\tcase\t_\t_\n\n";
        let p = write(dir.path(), "a.conllu", body);
        let Dataset::Tokens(s) = load_dataset(&p, TaskKind::TokenTagging, None).unwrap() else {
            panic!()
        };
        assert_eq!(s[0].words, vec!["Ev", "de"]);
        assert_eq!(s[0].labels, vec!["NOUN", "ADP"]);
    }

    #[test]
    fn malformed_lines_and_unknown_labels_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.txt", "a\tX\nb c d\n");
        assert!(matches!(
            load_dataset(&p, TaskKind::TokenTagging, None),
            Err(Error::Parse { line: 2, .. })
        ));
        let p = write(dir.path(), "ner.txt", "Ali\tB-PER\nVeli\tI-PER\nşurada\tX-LOC\n");
        assert!(matches!(load_dataset(&p, TaskKind::SpanNer, None), Err(Error::Parse { line: 3, .. })));
        let p = write(dir.path(), "ner2.txt", "Ali\tI-PER\nburada\tO\n");
        assert!(load_dataset(&p, TaskKind::SpanNer, None).is_ok());
    }

    #[test]
    fn classification_labels_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        let labels = vec!["NOT".to_string(), "OFF".to_string()];
        let p = write(dir.path(), "c.tsv", "id\ttext\tlabel\n1\tgüzel gün\tNOT\n2\tkötü söz\tOFF\n");
        assert_eq!(load_dataset(&p, TaskKind::SequenceClassification, Some(&labels)).unwrap().len(), 2);
        let p = write(dir.path(), "d.tsv", "1\tgüzel\tNOT\n2\tnötr\tMAYBE\n");
        assert!(matches!(
            load_dataset(&p, TaskKind::SequenceClassification, Some(&labels)),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn holdout_is_seeded_and_disjoint() {
        let items: Vec<LabeledText> = (0..20)
            .map(|i| LabeledText {
                id: i.to_string(),
                text: "t".into(),
                label: "NOT".into(),
            })
            .collect();
        let (a, b) = Dataset::Texts(items.clone()).holdout(0.1, 1).unwrap();
        let (a2, b2) = Dataset::Texts(items).holdout(0.1, 1).unwrap();
        assert_eq!((a.len(), b.len()), (18, 2));
        assert_eq!((a, b), (a2, b2));
    }
}
