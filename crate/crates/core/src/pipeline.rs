//! End-to-end experiment: data, split, two-phase training and evaluation.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::classifier::Variant;
use crate::dataset::{generate_synthetic, split, Dataset, Splits, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvaluationReport};
use crate::training::{train_full, ModelConfig, TrainConfig, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub split_seed: u64,
    pub beam_width: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variant: Variant::InterpNet1,
            split: [0.6, 0.2, 0.2],
            split_seed: 0,
            beam_width: 1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        let m = &self.model;
        if m.hidden_width == 0 || m.embed_dim == 0 || m.lstm_dim == 0 || m.max_decode_len == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if m.min_word_count == 0 {
            return Err(Error::Config("min_word_count must be at least 1".into()));
        }
        self.train.validate()
    }
}

/// Everything one experiment produces.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub splits: Splits,
    pub report: EvaluationReport,
}

/// Splits `dataset`, trains the configured variant and evaluates it on the
/// test split.
pub fn run_experiment(dataset: &Dataset, config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let splits = split(dataset.records(), config.split, config.split_seed)?;
    let trained = train_full(
        &splits.train,
        &splits.validation,
        dataset.num_classes(),
        &config.model,
        &config.train,
        config.variant,
    )?;
    let report = evaluate(
        &trained.classifier,
        &trained.explainer,
        &splits.test,
        config.variant,
        config.beam_width,
    )?;
    Ok(ExperimentOutcome {
        checkpoint: Checkpoint::new(trained.variant, trained.classifier, trained.explainer)?,
        log: trained.log,
        splits,
        report,
    })
}

/// Generates the synthetic dataset and runs one experiment on it.
pub fn run_synthetic(spec: &SyntheticSpec, config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let data = generate_synthetic(spec)?;
    run_experiment(&data.dataset, config)
}
