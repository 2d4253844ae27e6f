//! ADAM and the two-phase training routine: the classifier first, then the
//! explainer against a frozen classifier.

mod adam;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};

use crate::autodiff::Tape;
use crate::classifier::{representation_node, Classifier, ClassifierConfig, Variant};
use crate::dataset::{build_vocabulary, DatasetRecord};
use crate::error::{Error, Result};
use crate::explainer::{Explainer, ExplainerConfig, Vocabulary};
use crate::tensor::Tensor;

/// Optimization settings of one phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            max_epochs: 50,
            patience: 10,
            batch_size: 16,
            adam: AdamConfig::default(),
        }
    }
}

impl PhaseConfig {
    pub fn validate(&self, phase: Phase) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config(format!("{phase} batch_size must be at least 1")));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config(format!("{phase} max_epochs must be positive")));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "{phase} patience ({}) must be below max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        self.adam.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub classifier: PhaseConfig,
    pub explainer: PhaseConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            classifier: PhaseConfig::default(),
            explainer: PhaseConfig {
                max_epochs: 100,
                ..PhaseConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.classifier.validate(Phase::Classifier)?;
        self.explainer.validate(Phase::Explainer)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Classifier,
    Explainer,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Classifier => "classifier",
            Phase::Explainer => "explainer",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    /// 1-based within the phase.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation accuracy in the classifier phase, validation loss in the
    /// explainer phase.
    pub val_metric: f64,
    pub timestamp_ms: u128,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch of the returned checkpoint, per phase.
    pub best_epochs: BTreeMap<String, usize>,
}

impl TrainLog {
    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
        self.best_epochs.extend(other.best_epochs);
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(self.to_jsonl()?.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn check_finite(value: f64, phase: Phase, epoch: usize, what: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            phase: phase.name(),
            epoch,
            what,
        })
    }
}

fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn features_and_labels(records: &[DatasetRecord]) -> (Vec<&[f64]>, Vec<usize>) {
    (
        records.iter().map(|r| r.features.as_slice()).collect(),
        records.iter().map(|r| r.label).collect(),
    )
}

/// Tracks the best validation score and decides when to stop.
struct EarlyStop {
    patience: usize,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStop {
    fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records an epoch; returns whether it improved on the best so far.
    fn observe(&mut self, epoch: usize, improved: bool) -> bool {
        if improved || self.best_epoch == 0 {
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    fn should_stop(&self) -> bool {
        self.since_best > self.patience
    }
}

/// Trains the classifier on mean cross-entropy and returns the epoch with
/// the best validation accuracy (lower validation loss breaks ties).
pub fn train_classifier(
    model: &Classifier,
    train: &[DatasetRecord],
    validation: &[DatasetRecord],
    config: &PhaseConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Classifier, TrainLog)> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::arg("classifier training needs nonempty train and validation splits"));
    }
    config.validate(Phase::Classifier)?;
    let phase = Phase::Classifier;
    let (val_x, val_y) = features_and_labels(validation);

    let mut current = model.clone();
    let mut state = AdamState::new(config.adam, current.params());
    let mut best = current.clone();
    let mut best_score = (f64::NEG_INFINITY, f64::INFINITY);
    let mut stop = EarlyStop::new(config.patience);
    let mut log = TrainLog::default();

    for epoch in 1..=config.max_epochs {
        let mut loss_sum = 0.0;
        for batch in shuffled_batches(train.len(), config.batch_size, rng) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| train[i].features.as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| train[i].label).collect();
            let (loss, grads) = current.loss_and_gradients(&xs, &ys)?;
            check_finite(loss, phase, epoch, "training loss")?;
            adam_step(current.params_mut(), &grads, &mut state)?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = current.loss(&val_x, &val_y)?;
        check_finite(val_loss, phase, epoch, "validation loss")?;
        let val_acc = current.accuracy(&val_x, &val_y)?;
        log.records.push(EpochRecord {
            phase,
            epoch,
            train_loss,
            val_loss,
            val_metric: val_acc,
            timestamp_ms: now_ms(),
        });

        let improved =
            val_acc > best_score.0 || (val_acc == best_score.0 && val_loss < best_score.1);
        if stop.observe(epoch, improved) {
            best_score = (val_acc, val_loss);
            best = current.clone();
        }
        if stop.should_stop() {
            break;
        }
    }
    log.best_epochs.insert(phase.to_string(), stop.best_epoch);
    Ok((best, log))
}

/// Token sequences paired with the index of the record they explain; a
/// record with several explanations contributes one pair per explanation.
pub fn explanation_pairs(records: &[DatasetRecord], vocab: &Vocabulary) -> Vec<(usize, Vec<usize>)> {
    records
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            r.explanations
                .iter()
                .map(move |e| (i, vocab.training_sequence(e)))
        })
        .collect()
}

fn check_r_dim(classifier: &Classifier, explainer: &Explainer, variant: Variant) -> Result<()> {
    let r_dim = classifier
        .config()
        .representation_dim(variant.representation());
    if r_dim != explainer.config().r_dim {
        return Err(Error::Config(format!(
            "variant {variant} yields r(x) of length {r_dim} but the explainer expects {}",
            explainer.config().r_dim
        )));
    }
    Ok(())
}

/// Explanation loss of a batch of `(features, tokens)` pairs and, when
/// `with_gradients`, gradients for every classifier and explainer
/// parameter. The classifier runs on the same tape behind a gradient stop,
/// so its gradients are exactly zero.
pub fn explainer_batch_loss(
    classifier: &Classifier,
    explainer: &Explainer,
    variant: Variant,
    batch: &[(&[f64], &[usize])],
    with_gradients: bool,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    check_r_dim(classifier, explainer, variant)?;
    if batch.is_empty() {
        return Err(Error::arg("empty explanation batch"));
    }
    let mut tape = Tape::new();
    let c_nodes = classifier.bind(&mut tape, with_gradients)?;
    let e_nodes = explainer.bind(&mut tape, with_gradients)?;
    let xs: Vec<&[f64]> = batch.iter().map(|(x, _)| *x).collect();
    let x = tape.constant(Tensor::from_rows(&xs)?);
    let acts = classifier.forward_nodes(&mut tape, &c_nodes, x)?;
    let r = representation_node(&mut tape, &acts, variant.representation())?;
    let r = tape.stop_gradient(r)?;
    let sequences: Vec<Vec<usize>> = batch.iter().map(|(_, t)| t.to_vec()).collect();
    let loss = explainer.batch_loss_node(&mut tape, &e_nodes, r, &sequences)?;
    let value = tape.value(loss).data()[0];
    let grads = if with_gradients {
        tape.backward(loss)?
    } else {
        BTreeMap::new()
    };
    Ok((value, grads))
}

fn mean_explanation_loss(
    classifier: &Classifier,
    explainer: &Explainer,
    variant: Variant,
    records: &[DatasetRecord],
    pairs: &[(usize, Vec<usize>)],
    batch_size: usize,
) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let batch: Vec<(&[f64], &[usize])> = chunk
            .iter()
            .map(|(i, t)| (records[*i].features.as_slice(), t.as_slice()))
            .collect();
        let (loss, _) = explainer_batch_loss(classifier, explainer, variant, &batch, false)?;
        sum += loss * chunk.len() as f64;
    }
    Ok(sum / pairs.len() as f64)
}

/// Trains the explainer on teacher-forced cross-entropy with the classifier
/// frozen, returning the epoch with the lowest validation loss.
pub fn train_explainer(
    classifier: &Classifier,
    explainer: &Explainer,
    train: &[DatasetRecord],
    validation: &[DatasetRecord],
    config: &PhaseConfig,
    variant: Variant,
    rng: &mut ChaCha8Rng,
) -> Result<(Explainer, TrainLog)> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::arg("explainer training needs nonempty train and validation splits"));
    }
    config.validate(Phase::Explainer)?;
    check_r_dim(classifier, explainer, variant)?;
    let phase = Phase::Explainer;
    let train_pairs = explanation_pairs(train, explainer.vocab());
    let val_pairs = explanation_pairs(validation, explainer.vocab());

    let mut current = explainer.clone();
    let mut state = AdamState::new(config.adam, current.params());
    let mut best = current.clone();
    let mut best_loss = f64::INFINITY;
    let mut stop = EarlyStop::new(config.patience);
    let mut log = TrainLog::default();

    for epoch in 1..=config.max_epochs {
        let mut loss_sum = 0.0;
        for batch in shuffled_batches(train_pairs.len(), config.batch_size, rng) {
            let items: Vec<(&[f64], &[usize])> = batch
                .iter()
                .map(|&k| {
                    let (i, ref t) = train_pairs[k];
                    (train[i].features.as_slice(), t.as_slice())
                })
                .collect();
            let (loss, grads) = explainer_batch_loss(classifier, &current, variant, &items, true)?;
            check_finite(loss, phase, epoch, "training loss")?;
            adam_step(current.params_mut(), &grads, &mut state)?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_pairs.len() as f64;
        let val_loss = mean_explanation_loss(
            classifier,
            &current,
            variant,
            validation,
            &val_pairs,
            config.batch_size,
        )?;
        check_finite(val_loss, phase, epoch, "validation loss")?;
        log.records.push(EpochRecord {
            phase,
            epoch,
            train_loss,
            val_loss,
            val_metric: val_loss,
            timestamp_ms: now_ms(),
        });

        if stop.observe(epoch, val_loss < best_loss) {
            best_loss = val_loss;
            best = current.clone();
        }
        if stop.should_stop() {
            break;
        }
    }
    log.best_epochs.insert(phase.to_string(), stop.best_epoch);
    Ok((best, log))
}

/// Model sizes shared by every variant of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of every classifier hidden layer.
    pub hidden_width: usize,
    pub embed_dim: usize,
    /// Width of both explainer LSTM layers.
    pub lstm_dim: usize,
    pub max_decode_len: usize,
    pub min_word_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_width: 64,
            embed_dim: 32,
            lstm_dim: 64,
            max_decode_len: 30,
            min_word_count: 1,
        }
    }
}

impl ModelConfig {
    pub fn classifier_config(&self, variant: Variant, input_dim: usize, num_classes: usize) -> ClassifierConfig {
        ClassifierConfig::for_variant(variant, input_dim, self.hidden_width, num_classes)
    }

    pub fn explainer_config(&self, classifier: &ClassifierConfig, variant: Variant, vocab_size: usize) -> ExplainerConfig {
        ExplainerConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.lstm_dim,
            r_dim: classifier.representation_dim(variant.representation()),
            max_decode_len: self.max_decode_len,
        }
    }
}

/// Both trained models and the combined log.
#[derive(Clone, Debug)]
pub struct TrainedPair {
    pub variant: Variant,
    pub classifier: Classifier,
    pub explainer: Explainer,
    pub log: TrainLog,
}

/// Builds both models for `variant`, trains the classifier to convergence
/// and then the explainer against it.
pub fn train_full(
    train: &[DatasetRecord],
    validation: &[DatasetRecord],
    num_classes: usize,
    model: &ModelConfig,
    config: &TrainConfig,
    variant: Variant,
) -> Result<TrainedPair> {
    config.validate()?;
    let input_dim = train
        .first()
        .ok_or_else(|| Error::arg("training split is empty"))?
        .features
        .len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let c_config = model.classifier_config(variant, input_dim, num_classes);
    c_config.validate()?;
    let classifier = Classifier::new(c_config, &mut rng)?;
    let (classifier, mut log) =
        train_classifier(&classifier, train, validation, &config.classifier, &mut rng)?;

    let vocab = build_vocabulary(train, model.min_word_count);
    let e_config = model.explainer_config(classifier.config(), variant, vocab.len());
    let explainer = Explainer::new(e_config, vocab, &mut rng)?;
    let (explainer, e_log) = train_explainer(
        &classifier,
        &explainer,
        train,
        validation,
        &config.explainer,
        variant,
        &mut rng,
    )?;
    log.extend(e_log);

    Ok(TrainedPair {
        variant,
        classifier,
        explainer,
        log,
    })
}
