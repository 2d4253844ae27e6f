//! Classify-and-explain networks.
//!
//! A multilayer perceptron classifies a feature vector; the concatenation
//! of its layer activations, passed through a gradient stop, conditions a
//! two-layer LSTM that generates a natural-language explanation. Everything
//! runs on a small reverse-mode autodiff tape over `f64` tensors.

pub mod autodiff;
pub mod checkpoint;
pub mod classifier;
pub mod dataset;
mod error;
pub mod explainer;
pub mod metrics;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod training;

pub use checkpoint::Checkpoint;
pub use classifier::{Classifier, ClassifierConfig, RepresentationKind, Variant};
pub use error::{Error, Result};
pub use explainer::{Explainer, ExplainerConfig, Vocabulary};
pub use params::Params;
pub use pipeline::{run_experiment, run_synthetic, ExperimentConfig, ExperimentOutcome};
pub use tensor::Tensor;
