//! Greedy and beam decoding over any next-token model.

use std::cmp::Ordering;

use crate::classifier::argmax;
use crate::error::{Error, Result};

/// An autoregressive model that yields next-token log-probabilities.
pub trait StepModel {
    type State: Clone;

    fn start_token(&self) -> usize;
    fn end_token(&self) -> usize;
    fn initial_state(&mut self) -> Result<Self::State>;
    /// Feeds `token` and returns the new state with the log-probabilities
    /// of the following token.
    fn step(&mut self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f64>)>;
}

/// A decoded token sequence (start token excluded) and its total
/// log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

/// Picks the most likely token at every step, stopping at the terminal
/// token or after `max_len` tokens.
pub fn greedy<M: StepModel>(model: &mut M, max_len: usize) -> Result<Hypothesis> {
    let end = model.end_token();
    let mut state = model.initial_state()?;
    let mut prev = model.start_token();
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    };
    while hyp.tokens.len() < max_len {
        let (next_state, log_probs) = model.step(&state, prev)?;
        let tok = argmax(&log_probs);
        hyp.tokens.push(tok);
        hyp.log_prob += log_probs[tok];
        if tok == end {
            break;
        }
        state = next_state;
        prev = tok;
    }
    Ok(hyp)
}

struct Live<S> {
    hyp: Hypothesis,
    state: S,
    last: usize,
}

/// Beam search keeping the `width` best partial sequences per step.
///
/// Hypotheses reaching the terminal token leave the beam; those still live
/// at `max_len` are closed there. Ties are broken towards earlier beam
/// entries and lower token indices, so `width == 1` reproduces [`greedy`].
pub fn beam<M: StepModel>(model: &mut M, width: usize, max_len: usize) -> Result<Hypothesis> {
    if width == 0 {
        return Err(Error::arg("beam width must be at least 1"));
    }
    let end = model.end_token();
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
        },
        state: model.initial_state()?,
        last: model.start_token(),
    }];
    let mut done: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        // (score, beam entry, token)
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (b, entry) in live.iter().enumerate() {
            let (state, log_probs) = model.step(&entry.state, entry.last)?;
            candidates.extend(
                log_probs
                    .iter()
                    .enumerate()
                    .map(|(tok, lp)| (entry.hyp.log_prob + lp, b, tok)),
            );
            next_states.push(state);
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        candidates.truncate(width);

        let mut next = Vec::with_capacity(width);
        for (score, b, tok) in candidates {
            let mut tokens = live[b].hyp.tokens.clone();
            tokens.push(tok);
            let hyp = Hypothesis {
                tokens,
                log_prob: score,
            };
            if tok == end {
                done.push(hyp);
            } else {
                next.push(Live {
                    hyp,
                    state: next_states[b].clone(),
                    last: tok,
                });
            }
        }
        live = next;

        // Log-probabilities only decrease, so no live entry can overtake a
        // finished hypothesis that already scores at least as well.
        let best_done = done.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        if live.iter().all(|l| l.hyp.log_prob <= best_done) {
            break;
        }
    }
    done.extend(live.into_iter().map(|l| l.hyp));

    let mut best: Option<Hypothesis> = None;
    for h in done {
        if best.as_ref().map_or(true, |b| h.log_prob > b.log_prob) {
            best = Some(h);
        }
    }
    Ok(best.expect("at least one hypothesis"))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// First-order model over a fixed transition table of log-probabilities.
    struct Table {
        log_probs: Vec<Vec<f64>>,
        start: usize,
        end: usize,
    }

    impl StepModel for Table {
        type State = ();
        fn start_token(&self) -> usize {
            self.start
        }
        fn end_token(&self) -> usize {
            self.end
        }
        fn initial_state(&mut self) -> Result<()> {
            Ok(())
        }
        fn step(&mut self, _: &(), token: usize) -> Result<((), Vec<f64>)> {
            Ok(((), self.log_probs[token].clone()))
        }
    }

    fn table(rows: &[[f64; 3]]) -> Table {
        Table {
            log_probs: rows.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect(),
            start: 0,
            end: 2,
        }
    }

    #[test]
    fn end_first_gives_terminal_only() {
        let mut m = table(&[[0.1, 0.1, 0.8], [0.1, 0.1, 0.8], [0.1, 0.1, 0.8]]);
        let h = greedy(&mut m, 10).unwrap();
        assert_eq!(h.tokens, vec![2]);
    }

    #[test]
    fn never_ending_model_hits_the_cap() {
        let mut m = table(&[[0.2, 0.7, 0.1], [0.2, 0.7, 0.1], [0.2, 0.7, 0.1]]);
        assert_eq!(greedy(&mut m, 6).unwrap().tokens.len(), 6);
        assert_eq!(beam(&mut m, 1, 6).unwrap().tokens.len(), 6);
    }

    #[test]
    fn beam_escapes_greedy_trap() {
        // Greedy takes token 0 (0.6) then is forced into a poor ending; the
        // beam finds 1 -> end with probability 0.4 * 0.9.
        let mut m = table(&[[0.5, 0.1, 0.4], [0.05, 0.05, 0.9], [1.0 / 3.0; 3]]);
        m.log_probs[0] = [0.6f64, 0.4, 1e-9].iter().map(|p| p.ln()).collect();
        let g = greedy(&mut m, 4).unwrap();
        let b = beam(&mut m, 3, 4).unwrap();
        assert!(b.log_prob > g.log_prob);
        assert_eq!(b.tokens, vec![1, 2]);
    }

    #[test]
    fn zero_width_is_rejected() {
        let mut m = table(&[[0.1, 0.1, 0.8]; 3]);
        assert!(beam(&mut m, 0, 3).is_err());
    }
}
