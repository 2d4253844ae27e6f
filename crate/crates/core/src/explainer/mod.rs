//! Two-layer LSTM explanation generator conditioned on `r(x)`.
//!
//! The first layer reads token embeddings. The second layer reads the first
//! layer's hidden state concatenated with `r(x)` at every timestep, and a
//! linear projection of its hidden state gives next-token log-probabilities.

mod decode;
mod lstm;
mod vocab;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use decode::{beam, greedy, Hypothesis, StepModel};
pub use lstm::{lstm_cell, LstmCellParams, LstmNodes, FORGET_BIAS_INIT};
pub use vocab::{Vocabulary, VocabularyFile, END_TOKEN, START_TOKEN, UNK_TOKEN};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, Params};
use crate::tensor::Tensor;

const EMBEDDING: &str = "explainer.embedding";
const OUTPUT_WEIGHT: &str = "explainer.output.weight";
const OUTPUT_BIAS: &str = "explainer.output.bias";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplainerConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Width of both LSTM layers.
    pub hidden_dim: usize,
    pub r_dim: usize,
    pub max_decode_len: usize,
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("r_dim", self.r_dim),
            ("max_decode_len", self.max_decode_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("explainer {name} must be positive")));
        }
        Ok(())
    }

    fn layer1(&self) -> LstmCellParams {
        LstmCellParams::new("explainer.lstm1", self.embed_dim, self.hidden_dim)
    }

    fn layer2(&self) -> LstmCellParams {
        LstmCellParams::new(
            "explainer.lstm2",
            self.hidden_dim + self.r_dim,
            self.hidden_dim,
        )
    }
}

/// Tape handles for a bound explainer.
#[derive(Clone, Debug)]
pub struct ExplainerNodes {
    embedding: NodeId,
    layer1: LstmNodes,
    layer2: LstmNodes,
    output_weight: NodeId,
    output_bias: NodeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explainer {
    config: ExplainerConfig,
    vocab: Vocabulary,
    params: Params,
}

impl Explainer {
    pub fn new(config: ExplainerConfig, vocab: Vocabulary, rng: &mut impl Rng) -> Result<Self> {
        Self::check(&config, &vocab)?;
        let mut params = Params::new();
        params.insert(
            EMBEDDING,
            glorot_uniform(config.vocab_size, config.embed_dim, rng),
        );
        config.layer1().init(&mut params, rng);
        config.layer2().init(&mut params, rng);
        params.insert(
            OUTPUT_WEIGHT,
            glorot_uniform(config.hidden_dim, config.vocab_size, rng),
        );
        params.insert(OUTPUT_BIAS, Tensor::zeros(&[config.vocab_size]));
        Ok(Explainer {
            config,
            vocab,
            params,
        })
    }

    /// Every parameter zero.
    pub fn zeros(config: ExplainerConfig, vocab: Vocabulary) -> Result<Self> {
        Self::check(&config, &vocab)?;
        let mut params = Params::new();
        params.insert(
            EMBEDDING,
            Tensor::zeros(&[config.vocab_size, config.embed_dim]),
        );
        config.layer1().init_zeros(&mut params);
        config.layer2().init_zeros(&mut params);
        params.insert(
            OUTPUT_WEIGHT,
            Tensor::zeros(&[config.hidden_dim, config.vocab_size]),
        );
        params.insert(OUTPUT_BIAS, Tensor::zeros(&[config.vocab_size]));
        Ok(Explainer {
            config,
            vocab,
            params,
        })
    }

    pub fn from_params(config: ExplainerConfig, vocab: Vocabulary, params: Params) -> Result<Self> {
        let reference = Explainer::zeros(config.clone(), vocab.clone())?;
        reference.params.check_layout(&params)?;
        Ok(Explainer {
            config,
            vocab,
            params,
        })
    }

    fn check(config: &ExplainerConfig, vocab: &Vocabulary) -> Result<()> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "explainer vocab_size {} does not match vocabulary of {} words",
                config.vocab_size,
                vocab.len()
            )));
        }
        Ok(())
    }

    pub fn config(&self) -> &ExplainerConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<ExplainerNodes> {
        let params = &self.params;
        let put = |tape: &mut Tape, name: &str| -> Result<NodeId> {
            let t = params.expect(name)?.clone();
            if trainable {
                tape.param(name, t)
            } else {
                Ok(tape.constant(t))
            }
        };
        let embedding = put(tape, EMBEDDING)?;
        let layer1 = self.config.layer1().bind(params, tape, trainable)?;
        let layer2 = self.config.layer2().bind(params, tape, trainable)?;
        let output_weight = put(tape, OUTPUT_WEIGHT)?;
        let output_bias = put(tape, OUTPUT_BIAS)?;
        Ok(ExplainerNodes {
            embedding,
            layer1,
            layer2,
            output_weight,
            output_bias,
        })
    }

    fn check_r(&self, tape: &Tape, r: NodeId) -> Result<()> {
        let v = tape.value(r);
        if v.rows() != 1 || v.cols() != self.config.r_dim {
            return Err(Error::arg(format!(
                "representation has shape {:?}, explainer expects {} entries",
                v.shape(),
                self.config.r_dim
            )));
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() < 2 {
            return Err(Error::arg("token sequence needs at least 2 tokens"));
        }
        if tokens[0] != self.vocab.start_index() {
            return Err(Error::arg("token sequence must begin with the start token"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::arg(format!(
                "token index {bad} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn zero_state(&self, tape: &mut Tape, rows: usize) -> DecoderState {
        let z = Tensor::zeros(&[rows, self.config.hidden_dim]);
        DecoderState {
            h1: tape.constant(z.clone()),
            c1: tape.constant(z.clone()),
            h2: tape.constant(z.clone()),
            c2: tape.constant(z),
        }
    }

    fn advance(
        &self,
        tape: &mut Tape,
        nodes: &ExplainerNodes,
        r: NodeId,
        state: &DecoderState,
        tokens: &[usize],
    ) -> Result<DecoderState> {
        let x = tape.row_select(nodes.embedding, tokens)?;
        let (h1, c1) = lstm_cell(tape, &nodes.layer1, x, state.h1, state.c1)?;
        let joined = tape.concat(&[h1, r])?;
        let (h2, c2) = lstm_cell(tape, &nodes.layer2, joined, state.h2, state.c2)?;
        Ok(DecoderState { h1, c1, h2, c2 })
    }

    fn project(&self, tape: &mut Tape, nodes: &ExplainerNodes, hidden: NodeId) -> Result<NodeId> {
        let logits = tape.matmul(hidden, nodes.output_weight)?;
        let logits = tape.add_bias(logits, nodes.output_bias)?;
        tape.log_softmax(logits)
    }

    /// Teacher-forced pass: row `t` of the result holds log-probabilities
    /// for `tokens[t + 1]` given `tokens[..=t]` and `r`.
    pub fn log_probs_node(
        &self,
        tape: &mut Tape,
        nodes: &ExplainerNodes,
        r: NodeId,
        tokens: &[usize],
    ) -> Result<NodeId> {
        self.check_tokens(tokens)?;
        self.check_r(tape, r)?;
        let mut state = self.zero_state(tape, 1);
        let mut top = Vec::with_capacity(tokens.len() - 1);
        for &tok in &tokens[..tokens.len() - 1] {
            state = self.advance(tape, nodes, r, &state, &[tok])?;
            top.push(state.h2);
        }
        let hidden = tape.stack_rows(&top)?;
        self.project(tape, nodes, hidden)
    }

    /// Mean next-token cross-entropy of a terminated sequence.
    pub fn loss_node(
        &self,
        tape: &mut Tape,
        nodes: &ExplainerNodes,
        r: NodeId,
        tokens: &[usize],
    ) -> Result<NodeId> {
        if tokens.last() != Some(&self.vocab.end_index()) {
            return Err(Error::arg("token sequence must end with the terminal token"));
        }
        let log_probs = self.log_probs_node(tape, nodes, r, tokens)?;
        tape.nll(log_probs, &tokens[1..])
    }

    /// Mean over `sequences` of [`Explainer::loss_node`], where row `i` of
    /// `r` conditions sequence `i`. Sequences of equal length are stepped
    /// together as one matrix.
    pub fn batch_loss_node(
        &self,
        tape: &mut Tape,
        nodes: &ExplainerNodes,
        r: NodeId,
        sequences: &[Vec<usize>],
    ) -> Result<NodeId> {
        if sequences.is_empty() {
            return Err(Error::arg("empty explanation batch"));
        }
        let shape = tape.value(r).shape().to_vec();
        if shape.len() != 2 || shape[0] != sequences.len() || shape[1] != self.config.r_dim {
            return Err(Error::arg(format!(
                "representation batch has shape {shape:?}, expected [{}, {}]",
                sequences.len(),
                self.config.r_dim
            )));
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, seq) in sequences.iter().enumerate() {
            self.check_tokens(seq)?;
            if seq.last() != Some(&self.vocab.end_index()) {
                return Err(Error::arg("token sequence must end with the terminal token"));
            }
            groups.entry(seq.len()).or_default().push(i);
        }

        let total = sequences.len() as f64;
        let mut parts = Vec::with_capacity(groups.len());
        for (len, members) in groups {
            let rows = tape.row_select(r, &members)?;
            let mut state = self.zero_state(tape, members.len());
            let mut step_losses = Vec::with_capacity(len - 1);
            for t in 0..len - 1 {
                let inputs: Vec<usize> = members.iter().map(|&i| sequences[i][t]).collect();
                let targets: Vec<usize> = members.iter().map(|&i| sequences[i][t + 1]).collect();
                state = self.advance(tape, nodes, rows, &state, &inputs)?;
                let lp = self.project(tape, nodes, state.h2)?;
                step_losses.push(tape.nll(lp, &targets)?);
            }
            let group_loss = tape.mean_of(&step_losses)?;
            parts.push(tape.scale(group_loss, members.len() as f64 / total)?);
        }
        let mut loss = parts[0];
        for &p in &parts[1..] {
            loss = tape.add(loss, p)?;
        }
        Ok(loss)
    }

    fn r_leaf(&self, tape: &mut Tape, r: &[f64]) -> Result<NodeId> {
        if r.len() != self.config.r_dim {
            return Err(Error::arg(format!(
                "representation has {} entries, explainer expects {}",
                r.len(),
                self.config.r_dim
            )));
        }
        Ok(tape.constant(Tensor::from_rows(&[r])?))
    }

    /// Per-step log-probability vectors under teacher forcing.
    pub fn forward(&self, r: &[f64], tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let nodes = self.bind(&mut tape, false)?;
        let r = self.r_leaf(&mut tape, r)?;
        let lp = self.log_probs_node(&mut tape, &nodes, r, tokens)?;
        let v = tape.value(lp);
        Ok((0..v.rows()).map(|i| v.row(i).to_vec()).collect())
    }

    pub fn explanation_loss(&self, r: &[f64], tokens: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let nodes = self.bind(&mut tape, false)?;
        let r = self.r_leaf(&mut tape, r)?;
        let loss = self.loss_node(&mut tape, &nodes, r, tokens)?;
        Ok(tape.value(loss).data()[0])
    }

    /// Loss and gradients for every explainer parameter.
    pub fn loss_and_gradients(
        &self,
        r: &[f64],
        tokens: &[usize],
    ) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let mut tape = Tape::new();
        let nodes = self.bind(&mut tape, true)?;
        let r = self.r_leaf(&mut tape, r)?;
        let loss = self.loss_node(&mut tape, &nodes, r, tokens)?;
        Ok((tape.value(loss).data()[0], tape.backward(loss)?))
    }

    /// Total log-probability of emitting `body` (start token excluded).
    pub fn sequence_log_prob(&self, r: &[f64], body: &[usize]) -> Result<f64> {
        let mut tokens = Vec::with_capacity(body.len() + 1);
        tokens.push(self.vocab.start_index());
        tokens.extend_from_slice(body);
        let steps = self.forward(r, &tokens)?;
        Ok(steps.iter().zip(body).map(|(lp, &t)| lp[t]).sum())
    }

    fn stepper(&self, r: &[f64]) -> Result<Stepper<'_>> {
        let mut tape = Tape::new();
        let nodes = self.bind(&mut tape, false)?;
        let r = self.r_leaf(&mut tape, r)?;
        Ok(Stepper {
            model: self,
            tape,
            nodes,
            r,
        })
    }

    /// Greedy decoding; the result excludes the start token and ends with
    /// the terminal token unless `max_len` was reached first.
    pub fn decode_greedy(&self, r: &[f64], max_len: usize) -> Result<Vec<usize>> {
        Ok(greedy(&mut self.stepper(r)?, max_len)?.tokens)
    }

    pub fn decode_beam(&self, r: &[f64], beam_width: usize, max_len: usize) -> Result<Vec<usize>> {
        Ok(beam(&mut self.stepper(r)?, beam_width, max_len)?.tokens)
    }

    /// Decodes with greedy search when `beam_width == 1`, beam search otherwise.
    pub fn decode(&self, r: &[f64], beam_width: usize) -> Result<Vec<usize>> {
        let max_len = self.config.max_decode_len;
        if beam_width == 1 {
            self.decode_greedy(r, max_len)
        } else {
            self.decode_beam(r, beam_width, max_len)
        }
    }

    /// Decoded tokens joined into a sentence, with the terminal period
    /// attached to the last word.
    pub fn render(&self, tokens: &[usize]) -> String {
        let words = self.vocab.decode(tokens);
        let mut out = String::new();
        for w in &words {
            if !(out.is_empty() || w == END_TOKEN) {
                out.push(' ');
            }
            out.push_str(w);
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    h1: NodeId,
    c1: NodeId,
    h2: NodeId,
    c2: NodeId,
}

/// Incremental decoding on a private inference tape.
struct Stepper<'a> {
    model: &'a Explainer,
    tape: Tape,
    nodes: ExplainerNodes,
    r: NodeId,
}

impl StepModel for Stepper<'_> {
    type State = DecoderState;

    fn start_token(&self) -> usize {
        self.model.vocab.start_index()
    }

    fn end_token(&self) -> usize {
        self.model.vocab.end_index()
    }

    fn initial_state(&mut self) -> Result<DecoderState> {
        Ok(self.model.zero_state(&mut self.tape, 1))
    }

    fn step(&mut self, state: &DecoderState, token: usize) -> Result<(DecoderState, Vec<f64>)> {
        let next = self
            .model
            .advance(&mut self.tape, &self.nodes, self.r, state, &[token])?;
        let lp = self.model.project(&mut self.tape, &self.nodes, next.h2)?;
        Ok((next, self.tape.value(lp).data().to_vec()))
    }
}
