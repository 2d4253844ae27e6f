use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use interpnet::training::{ModelConfig, TrainConfig};
use interpnet::{ExperimentConfig, Variant};
use serde::{Deserialize, Serialize};

/// Contents of a `--config` file; command-line flags override it.
///
/// ```toml
/// data = "toy.jsonl"
/// out = "runs/toy"
/// variant = "interpnet1"
/// seed = 7
/// split = [0.6, 0.2, 0.2]
/// beam_width = 1
///
/// [model]
/// hidden_width = 64
///
/// [train.explainer]
/// max_epochs = 100
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub variant: Option<Variant>,
    /// Seeds both the split and training.
    pub seed: Option<u64>,
    pub split: Option<[f64; 3]>,
    pub beam_width: Option<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Flags shared by the commands that run an experiment.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub seed: Option<u64>,
    pub beam_width: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // Relative paths in a config file are relative to the file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.data, &mut config.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn apply(mut self, o: Overrides) -> Self {
        self.data = o.data.or(self.data);
        self.out = o.out.or(self.out);
        self.variant = o.variant.or(self.variant);
        self.seed = o.seed.or(self.seed);
        self.beam_width = o.beam_width.or(self.beam_width);
        self
    }

    pub fn data_path(&self) -> Result<&Path> {
        let Some(path) = self.data.as_deref() else {
            bail!("no dataset given (use --data or `data` in the config file)");
        };
        if !path.is_file() {
            bail!("dataset {} does not exist", path.display());
        }
        Ok(path)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn experiment(&self, variant: Variant) -> Result<ExperimentConfig> {
        let defaults = ExperimentConfig::default();
        let mut train = self.train.clone();
        let mut split_seed = defaults.split_seed;
        if let Some(seed) = self.seed {
            train.seed = seed;
            split_seed = seed;
        }
        let config = ExperimentConfig {
            variant,
            split: self.split.unwrap_or(defaults.split),
            split_seed,
            beam_width: self.beam_width.unwrap_or(defaults.beam_width),
            model: self.model.clone(),
            train,
        };
        config.validate()?;
        Ok(config)
    }
}
