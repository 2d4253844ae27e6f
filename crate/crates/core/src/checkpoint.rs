//! Single-file JSON checkpoints holding both trained models.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, ClassifierConfig, Variant};
use crate::error::{Error, Result};
use crate::explainer::{Explainer, ExplainerConfig, Vocabulary};
use crate::params::Params;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ClassifierPart {
    config: ClassifierConfig,
    params: Params,
}

#[derive(Serialize, Deserialize)]
struct ExplainerPart {
    config: ExplainerConfig,
    vocab: Vocabulary,
    params: Params,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    variant: Variant,
    classifier: ClassifierPart,
    explainer: ExplainerPart,
}

/// A trained classifier and explainer for one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub variant: Variant,
    pub classifier: Classifier,
    pub explainer: Explainer,
}

impl Checkpoint {
    pub fn new(variant: Variant, classifier: Classifier, explainer: Explainer) -> Result<Self> {
        let r_dim = classifier
            .config()
            .representation_dim(variant.representation());
        if r_dim != explainer.config().r_dim {
            return Err(Error::Config(format!(
                "variant {variant} yields r(x) of length {r_dim} but the explainer expects {}",
                explainer.config().r_dim
            )));
        }
        Ok(Checkpoint {
            variant,
            classifier,
            explainer,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            variant: self.variant,
            classifier: ClassifierPart {
                config: self.classifier.config().clone(),
                params: self.classifier.params().clone(),
            },
            explainer: ExplainerPart {
                config: self.explainer.config().clone(),
                vocab: self.explainer.vocab().clone(),
                params: self.explainer.params().clone(),
            },
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format_version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint version {}",
                file.format_version
            )));
        }
        let classifier = Classifier::from_params(file.classifier.config, file.classifier.params)?;
        let explainer = Explainer::from_params(
            file.explainer.config,
            file.explainer.vocab,
            file.explainer.params,
        )?;
        Checkpoint::new(file.variant, classifier, explainer)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
