//! Corpus-level BLEU.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::TokenizedCorpus;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BleuOptions {
    pub max_n: usize,
    /// Add one to the numerator and denominator of every zero precision.
    pub smoothing: bool,
}

impl Default for BleuOptions {
    fn default() -> Self {
        BleuOptions {
            max_n: 4,
            smoothing: true,
        }
    }
}

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Reference length closest to `len`, preferring the shorter on ties.
fn closest_ref_len(len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(len), r))
        .unwrap_or(0)
}

/// BLEU in `[0, 100]` with four-gram precision and add-one smoothing.
pub fn bleu(corpus: &TokenizedCorpus) -> Result<f64> {
    bleu_with(corpus, BleuOptions::default())
}

/// Geometric mean of clipped n-gram precisions times the brevity penalty.
///
/// The highest order is capped at the longest candidate so that short
/// corpora are scored over the orders they actually contain.
pub fn bleu_with(corpus: &TokenizedCorpus, options: BleuOptions) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::arg("BLEU of an empty corpus"));
    }
    if options.max_n == 0 {
        return Err(Error::arg("BLEU needs max_n >= 1"));
    }
    let longest = corpus.entries().iter().map(|e| e.candidate.len()).max().unwrap_or(0);
    let orders = options.max_n.min(longest);
    if orders == 0 {
        return Ok(0.0);
    }

    let mut matched = vec![0usize; orders];
    let mut total = vec![0usize; orders];
    let mut cand_len = 0;
    let mut ref_len = 0;
    for entry in corpus.entries() {
        cand_len += entry.candidate.len();
        ref_len += closest_ref_len(entry.candidate.len(), &entry.references);
        for n in 1..=orders {
            let cand = ngram_counts(&entry.candidate, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &entry.references {
                for (gram, c) in ngram_counts(r, n) {
                    let slot = max_ref.entry(gram).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
            for (gram, c) in &cand {
                matched[n - 1] += (*c).min(max_ref.get(gram).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }

    let mut log_sum = 0.0;
    for n in 0..orders {
        let (m, t) = if matched[n] == 0 {
            if !options.smoothing {
                return Ok(0.0);
            }
            (1.0, total[n] as f64 + 1.0)
        } else {
            (matched[n] as f64, total[n] as f64)
        };
        log_sum += (m / t).ln();
    }
    let brevity = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(100.0 * brevity * (log_sum / orders as f64).exp())
}
