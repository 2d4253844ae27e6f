//! Explanation quality metrics: corpus BLEU, exact-match METEOR and CIDEr.

mod bleu;
mod cider;
mod evaluate;
mod meteor;
mod tokenize;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bleu::{bleu, bleu_with, BleuOptions};
pub use cider::{cider, cider_entries, cider_with, CIDER_MAX_N};
pub use evaluate::{evaluate, evaluate_with, Conditioning, EvaluatedExample, EvaluationReport};
pub use meteor::{align, meteor_entries, meteor_lite, meteor_sentence, Alignment};
pub use tokenize::tokenize;

use crate::error::{Error, Result};

/// A candidate and the references it is scored against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusEntry {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

/// Tokenized candidates with at least one reference each.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenizedCorpus {
    entries: Vec<CorpusEntry>,
}

impl TokenizedCorpus {
    pub fn new(entries: Vec<CorpusEntry>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if e.candidate.is_empty() {
                return Err(Error::arg(format!("corpus entry {i} has an empty candidate")));
            }
            if e.references.is_empty() || e.references.iter().any(Vec::is_empty) {
                return Err(Error::arg(format!(
                    "corpus entry {i} needs nonempty references"
                )));
            }
        }
        Ok(TokenizedCorpus { entries })
    }

    /// Tokenizes raw candidate and reference sentences.
    pub fn from_sentences<S: AsRef<str>>(pairs: &[(S, Vec<S>)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|(c, refs)| CorpusEntry {
                    candidate: tokenize(c.as_ref()),
                    references: refs.iter().map(|r| tokenize(r.as_ref())).collect(),
                })
                .collect(),
        )
    }

    /// Builds a corpus from pre-tokenized, space-separated strings.
    pub fn from_token_strings(entries: &[(&str, &[&str])]) -> Result<Self> {
        Self::new(
            entries
                .iter()
                .map(|(c, refs)| CorpusEntry {
                    candidate: toks(c),
                    references: refs.iter().map(|r| toks(r)).collect(),
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub(crate) fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Scores of one corpus entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryScores {
    /// Smoothed sentence-level BLEU in `[0, 100]`.
    pub bleu: f64,
    pub meteor_lite: f64,
    /// `None` when the corpus has a single entry.
    pub cider: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub meteor_lite: f64,
    /// `None` when the corpus is too small for document frequencies.
    pub cider: Option<f64>,
    pub per_entry: Vec<EntryScores>,
}

/// All three metrics over one corpus.
pub fn score_corpus(corpus: &TokenizedCorpus) -> Result<MetricReport> {
    let bleu_score = bleu(corpus)?;
    let meteor = meteor_entries(corpus);
    let meteor_score = meteor_lite(corpus)?;
    let cider_per = if corpus.len() >= 2 {
        Some(cider_entries(corpus, CIDER_MAX_N)?)
    } else {
        None
    };
    let per_entry = corpus
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let single = TokenizedCorpus {
                entries: vec![e.clone()],
            };
            Ok(EntryScores {
                bleu: bleu(&single)?,
                meteor_lite: 100.0 * meteor[i],
                cider: cider_per.as_ref().map(|c| c[i]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cider_score = cider_per.map(|c| c.iter().sum::<f64>() / c.len() as f64);
    Ok(MetricReport {
        bleu: bleu_score,
        meteor_lite: meteor_score,
        cider: cider_score,
        per_entry,
    })
}

/// One line of a corpus interchange file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub candidate: String,
    pub references: Vec<String>,
}

/// Reads line-delimited `{"candidate": ..., "references": [...]}` records.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn save_corpus(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Tokenizes interchange records into a scoreable corpus.
pub fn tokenize_records(records: &[CorpusRecord]) -> Result<TokenizedCorpus> {
    TokenizedCorpus::new(
        records
            .iter()
            .map(|r| CorpusEntry {
                candidate: tokenize(&r.candidate),
                references: r.references.iter().map(|s| tokenize(s)).collect(),
            })
            .collect(),
    )
}
