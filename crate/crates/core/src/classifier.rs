//! Feed-forward ReLU classifier over precomputed feature vectors.
//!
//! The classifier records every activation `f1 = x, f2, ..., f_{L+2} = p(y|x)`
//! so that the explainer can be conditioned on them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, Params};
use crate::tensor::Tensor;

pub const MAX_HIDDEN_LAYERS: usize = 3;

/// Which activations make up the conditioning vector `r(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationKind {
    /// Class probabilities only.
    OutputOnly,
    /// Input features, every hidden activation and the class probabilities.
    AllActivations,
    /// The raw input features (a plain captioning model).
    InputOnly,
}

/// The five architectures compared in the evaluation sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[serde(rename = "interpnet0")]
    InterpNet0,
    #[serde(rename = "interpnet1")]
    InterpNet1,
    #[serde(rename = "interpnet2")]
    InterpNet2,
    #[serde(rename = "interpnet3")]
    InterpNet3,
    Captioning,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::InterpNet0,
        Variant::InterpNet1,
        Variant::InterpNet2,
        Variant::InterpNet3,
        Variant::Captioning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::InterpNet0 => "interpnet0",
            Variant::InterpNet1 => "interpnet1",
            Variant::InterpNet2 => "interpnet2",
            Variant::InterpNet3 => "interpnet3",
            Variant::Captioning => "captioning",
        }
    }

    /// Row label used in comparison tables.
    pub fn description(self) -> &'static str {
        match self {
            Variant::InterpNet0 => "InterpNET0 (output only)",
            Variant::InterpNet1 => "InterpNET1 (1 hidden layer)",
            Variant::InterpNet2 => "InterpNET2 (2 hidden layers)",
            Variant::InterpNet3 => "InterpNET3 (3 hidden layers)",
            Variant::Captioning => "Captioning (input only)",
        }
    }

    pub fn hidden_layers(self) -> usize {
        match self {
            Variant::InterpNet0 => 0,
            Variant::InterpNet1 | Variant::Captioning => 1,
            Variant::InterpNet2 => 2,
            Variant::InterpNet3 => 3,
        }
    }

    pub fn representation(self) -> RepresentationKind {
        match self {
            Variant::InterpNet0 => RepresentationKind::OutputOnly,
            Variant::Captioning => RepresentationKind::InputOnly,
            _ => RepresentationKind::AllActivations,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected one of interpnet0, interpnet1, interpnet2, interpnet3, captioning)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl ClassifierConfig {
    /// The classifier shape used by `variant`, with every hidden layer
    /// `hidden_width` wide.
    pub fn for_variant(
        variant: Variant,
        input_dim: usize,
        hidden_width: usize,
        num_classes: usize,
    ) -> Self {
        ClassifierConfig {
            input_dim,
            hidden_dims: vec![hidden_width; variant.hidden_layers()],
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config(
                "classifier input_dim and num_classes must be positive".into(),
            ));
        }
        if self.hidden_dims.len() > MAX_HIDDEN_LAYERS {
            return Err(Error::Config(format!(
                "at most {MAX_HIDDEN_LAYERS} hidden layers are supported, got {}",
                self.hidden_dims.len()
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Widths of every layer from input to output.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend(&self.hidden_dims);
        widths.push(self.num_classes);
        widths
    }

    /// Length of `r(x)` for the given representation.
    pub fn representation_dim(&self, kind: RepresentationKind) -> usize {
        match kind {
            RepresentationKind::OutputOnly => self.num_classes,
            RepresentationKind::InputOnly => self.input_dim,
            RepresentationKind::AllActivations => self.layer_widths().iter().sum(),
        }
    }
}

/// Activations `[f1, ..., f_{L+2}]` of one example; the first entry is the
/// input and the last the class-probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierActivations {
    pub layers: Vec<Vec<f64>>,
}

impl ClassifierActivations {
    pub fn class_probs(&self) -> &[f64] {
        self.layers.last().expect("at least input and output layers")
    }
}

/// Builds `r(x)` from recorded activations.
pub fn representation(acts: &ClassifierActivations, kind: RepresentationKind) -> Vec<f64> {
    match kind {
        RepresentationKind::OutputOnly => acts.class_probs().to_vec(),
        RepresentationKind::InputOnly => acts.layers[0].clone(),
        RepresentationKind::AllActivations => acts.layers.concat(),
    }
}

/// Builds `r(x)` on a tape from the activation nodes of a batched forward.
pub fn representation_node(
    tape: &mut Tape,
    layers: &[NodeId],
    kind: RepresentationKind,
) -> Result<NodeId> {
    let (first, last) = match (layers.first(), layers.last()) {
        (Some(f), Some(l)) if layers.len() >= 2 => (*f, *l),
        _ => return Err(Error::arg("activations need input and output layers")),
    };
    match kind {
        RepresentationKind::OutputOnly => Ok(last),
        RepresentationKind::InputOnly => Ok(first),
        RepresentationKind::AllActivations => tape.concat(layers),
    }
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Tape handles for the weights of one bound classifier.
#[derive(Clone, Debug)]
pub struct ClassifierNodes {
    layers: Vec<(NodeId, NodeId)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    config: ClassifierConfig,
    params: Params,
}

fn weight_name(layer: usize) -> String {
    format!("classifier.dense{layer}.weight")
}

fn bias_name(layer: usize) -> String {
    format!("classifier.dense{layer}.bias")
}

impl Classifier {
    /// Glorot-uniform weights and zero biases.
    pub fn new(config: ClassifierConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let widths = config.layer_widths();
        let mut params = Params::new();
        for (i, pair) in widths.windows(2).enumerate() {
            params.insert(weight_name(i), glorot_uniform(pair[0], pair[1], rng));
            params.insert(bias_name(i), Tensor::zeros(&[pair[1]]));
        }
        Ok(Classifier { config, params })
    }

    /// A classifier with every weight and bias zero.
    pub fn zeros(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.layer_widths();
        let mut params = Params::new();
        for (i, pair) in widths.windows(2).enumerate() {
            params.insert(weight_name(i), Tensor::zeros(&[pair[0], pair[1]]));
            params.insert(bias_name(i), Tensor::zeros(&[pair[1]]));
        }
        Ok(Classifier { config, params })
    }

    /// Wraps existing parameters after checking them against `config`.
    pub fn from_params(config: ClassifierConfig, params: Params) -> Result<Self> {
        let reference = Classifier::zeros(config.clone())?;
        reference.params.check_layout(&params)?;
        Ok(Classifier { config, params })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.config.hidden_dims.len() + 1
    }

    /// Puts the weights on `tape`, as registered parameters when `trainable`
    /// and as constants otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<ClassifierNodes> {
        let mut layers = Vec::with_capacity(self.num_layers());
        for i in 0..self.num_layers() {
            let (wn, bn) = (weight_name(i), bias_name(i));
            let w = self.params.expect(&wn)?.clone();
            let b = self.params.expect(&bn)?.clone();
            layers.push(if trainable {
                (tape.param(wn, w)?, tape.param(bn, b)?)
            } else {
                (tape.constant(w), tape.constant(b))
            });
        }
        Ok(ClassifierNodes { layers })
    }

    /// Batched forward pass; `x` holds one example per row. Returns the
    /// activation nodes `[f1, ..., f_{L+2}]`.
    pub fn forward_nodes(
        &self,
        tape: &mut Tape,
        nodes: &ClassifierNodes,
        x: NodeId,
    ) -> Result<Vec<NodeId>> {
        let cols = tape.value(x).cols();
        if cols != self.config.input_dim {
            return Err(Error::arg(format!(
                "feature vector has {cols} entries, classifier expects {}",
                self.config.input_dim
            )));
        }
        let mut acts = vec![x];
        let mut h = x;
        let last = nodes.layers.len() - 1;
        for (i, &(w, b)) in nodes.layers.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            h = if i == last {
                tape.softmax(z)?
            } else {
                tape.relu(z)?
            };
            acts.push(h);
        }
        Ok(acts)
    }

    fn input_matrix(&self, xs: &[&[f64]]) -> Result<Tensor> {
        if xs.is_empty() {
            return Err(Error::arg("empty batch"));
        }
        if let Some(bad) = xs.iter().find(|x| x.len() != self.config.input_dim) {
            return Err(Error::arg(format!(
                "feature vector has {} entries, classifier expects {}",
                bad.len(),
                self.config.input_dim
            )));
        }
        Tensor::from_rows(xs)
    }

    /// Activations of a batch of examples.
    pub fn forward_batch(&self, xs: &[&[f64]]) -> Result<Vec<ClassifierActivations>> {
        let input = self.input_matrix(xs)?;
        let mut tape = Tape::new();
        let nodes = self.bind(&mut tape, false)?;
        let x = tape.constant(input);
        let layer_ids = self.forward_nodes(&mut tape, &nodes, x)?;
        Ok((0..xs.len())
            .map(|r| ClassifierActivations {
                layers: layer_ids
                    .iter()
                    .map(|&id| tape.value(id).row(r).to_vec())
                    .collect(),
            })
            .collect())
    }

    /// Class probabilities and recorded activations of a single example.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ClassifierActivations)> {
        let acts = self
            .forward_batch(&[x])?
            .pop()
            .expect("one row in, one row out");
        Ok((acts.class_probs().to_vec(), acts))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?.0))
    }

    /// Mean cross-entropy over a batch, recorded on `tape`.
    pub fn loss_node(
        &self,
        tape: &mut Tape,
        nodes: &ClassifierNodes,
        xs: &[&[f64]],
        labels: &[usize],
    ) -> Result<NodeId> {
        if xs.len() != labels.len() {
            return Err(Error::arg(format!(
                "{} examples but {} labels",
                xs.len(),
                labels.len()
            )));
        }
        let input = self.input_matrix(xs)?;
        let x = tape.constant(input);
        let acts = self.forward_nodes(tape, nodes, x)?;
        let probs = *acts.last().expect("output layer");
        tape.cross_entropy(probs, labels)
    }

    /// Mean cross-entropy of a batch.
    pub fn loss(&self, xs: &[&[f64]], labels: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let nodes = self.bind(&mut tape, false)?;
        let loss = self.loss_node(&mut tape, &nodes, xs, labels)?;
        Ok(tape.value(loss).data()[0])
    }

    /// Batch loss and its gradient for every classifier parameter.
    pub fn loss_and_gradients(
        &self,
        xs: &[&[f64]],
        labels: &[usize],
    ) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let mut tape = Tape::new();
        let nodes = self.bind(&mut tape, true)?;
        let loss = self.loss_node(&mut tape, &nodes, xs, labels)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], grads))
    }

    /// Fraction of examples whose predicted class equals the label.
    pub fn accuracy(&self, xs: &[&[f64]], labels: &[usize]) -> Result<f64> {
        let acts = self.forward_batch(xs)?;
        let correct = acts
            .iter()
            .zip(labels)
            .filter(|(a, &y)| argmax(a.class_probs()) == y)
            .count();
        Ok(correct as f64 / labels.len() as f64)
    }
}
