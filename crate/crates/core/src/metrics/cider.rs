//! CIDEr: cosine similarity of TF-IDF weighted n-gram vectors.
//!
//! Document frequency counts the entries whose references contain an
//! n-gram, so n-grams shared by every entry carry no weight.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

use super::bleu::ngram_counts;
use super::TokenizedCorpus;

pub const CIDER_MAX_N: usize = 4;

type Vector<'a> = HashMap<&'a [String], f64>;

fn tfidf<'a>(tokens: &'a [String], n: usize, idf: &dyn Fn(&[String]) -> f64) -> Vector<'a> {
    let counts = ngram_counts(tokens, n);
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(g, c)| (g, c as f64 / total as f64 * idf(g)))
        .collect()
}

fn cosine(a: &Vector<'_>, b: &Vector<'_>) -> f64 {
    let norm = |v: &Vector<'_>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a
        .iter()
        .filter_map(|(g, x)| b.get(g).map(|y| x * y))
        .sum();
    dot / (na * nb)
}

/// Per-entry CIDEr scores in `[0, 10]`.
pub fn cider_entries(corpus: &TokenizedCorpus, max_n: usize) -> Result<Vec<f64>> {
    if corpus.len() < 2 {
        return Err(Error::arg(format!(
            "CIDEr needs at least 2 corpus entries, got {}",
            corpus.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::arg("CIDEr needs max_n >= 1"));
    }
    let docs = corpus.len() as f64;
    let mut scores = vec![0.0; corpus.len()];
    for n in 1..=max_n {
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for entry in corpus.entries() {
            let grams: HashSet<&[String]> = entry
                .references
                .iter()
                .flat_map(|r| ngram_counts(r, n).into_keys())
                .collect();
            for g in grams {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let idf = |g: &[String]| (docs / df.get(g).copied().unwrap_or(0).max(1) as f64).ln();

        for (score, entry) in scores.iter_mut().zip(corpus.entries()) {
            let cand = tfidf(&entry.candidate, n, &idf);
            let sims: f64 = entry
                .references
                .iter()
                .map(|r| cosine(&cand, &tfidf(r, n, &idf)))
                .sum();
            *score += sims / entry.references.len() as f64;
        }
    }
    Ok(scores.into_iter().map(|s| 10.0 * s / max_n as f64).collect())
}

/// Corpus CIDEr: mean of per-entry scores.
pub fn cider(corpus: &TokenizedCorpus) -> Result<f64> {
    cider_with(corpus, CIDER_MAX_N)
}

pub fn cider_with(corpus: &TokenizedCorpus, max_n: usize) -> Result<f64> {
    let scores = cider_entries(corpus, max_n)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
