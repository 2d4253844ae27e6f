//! Exact-match METEOR: unigram alignment, harmonic F-mean weighted towards
//! recall, and a fragmentation penalty.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::TokenizedCorpus;

/// Search nodes allowed per alignment before settling for the best found.
const ALIGNMENT_BUDGET: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

/// Maximum-match unigram alignment with the fewest chunks.
pub fn align(candidate: &[String], reference: &[String]) -> Alignment {
    let mut ref_positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, w) in reference.iter().enumerate() {
        ref_positions.entry(w.as_str()).or_default().push(j);
    }
    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for w in candidate {
        *cand_counts.entry(w.as_str()).or_default() += 1;
    }
    // Occurrences of each word that must stay unmatched for a maximum
    // alignment.
    let mut skips: HashMap<&str, usize> = HashMap::new();
    let mut matches = 0;
    for (w, &c) in &cand_counts {
        let r = ref_positions.get(w).map_or(0, Vec::len);
        matches += c.min(r);
        skips.insert(w, c.saturating_sub(r));
    }
    if matches == 0 {
        return Alignment {
            matches: 0,
            chunks: 0,
        };
    }

    let mut search = Search {
        candidate,
        ref_positions: &ref_positions,
        used: vec![false; reference.len()],
        skips,
        best: usize::MAX,
        visited: 0,
    };
    search.run(0, None, 0);
    Alignment {
        matches,
        chunks: search.best,
    }
}

struct Search<'a> {
    candidate: &'a [String],
    ref_positions: &'a HashMap<&'a str, Vec<usize>>,
    used: Vec<bool>,
    skips: HashMap<&'a str, usize>,
    best: usize,
    visited: usize,
}

impl<'a> Search<'a> {
    /// Depth-first over candidate positions. `prev` is the reference
    /// position matched by the previous candidate token, if any.
    fn run(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        if chunks >= self.best {
            return;
        }
        if i == self.candidate.len() {
            self.best = chunks;
            return;
        }
        self.visited += 1;
        if self.visited > ALIGNMENT_BUDGET && self.best != usize::MAX {
            return;
        }
        let word = self.candidate[i].as_str();
        let positions = self.ref_positions.get(word).map(Vec::as_slice).unwrap_or(&[]);

        // Extending the current chunk first finds good bounds early.
        let mut order: Vec<usize> = positions.iter().copied().filter(|&j| !self.used[j]).collect();
        if let Some(p) = prev {
            if let Some(k) = order.iter().position(|&j| j == p + 1) {
                order[..=k].rotate_right(1);
            }
        }
        for j in order {
            let extends = prev.is_some_and(|p| p + 1 == j);
            self.used[j] = true;
            self.run(i + 1, Some(j), chunks + usize::from(!extends));
            self.used[j] = false;
        }

        let skips = self.skips.get(word).copied().unwrap_or(0);
        if skips > 0 {
            self.skips.insert(self.candidate[i].as_str(), skips - 1);
            self.run(i + 1, None, chunks);
            self.skips.insert(self.candidate[i].as_str(), skips);
        }
    }
}

/// Sentence score in `[0, 1]` against one reference.
pub fn meteor_sentence(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let Alignment { matches, chunks } = align(candidate, reference);
    if matches == 0 {
        return 0.0;
    }
    let m = matches as f64;
    let precision = m / candidate.len() as f64;
    let recall = m / reference.len() as f64;
    let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

/// Per-entry scores in `[0, 1]`: the best over each entry's references.
pub fn meteor_entries(corpus: &TokenizedCorpus) -> Vec<f64> {
    corpus
        .entries()
        .iter()
        .map(|e| {
            e.references
                .iter()
                .map(|r| meteor_sentence(&e.candidate, r))
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Corpus mean of entry scores, scaled to `[0, 100]`.
pub fn meteor_lite(corpus: &TokenizedCorpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::arg("METEOR of an empty corpus"));
    }
    let scores = meteor_entries(corpus);
    Ok(100.0 * scores.iter().sum::<f64>() / scores.len() as f64)
}
