use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, representation, Classifier, Variant};
use crate::dataset::DatasetRecord;
use crate::error::{Error, Result};
use crate::explainer::Explainer;

use super::{score_corpus, tokenize, CorpusEntry, EntryScores, TokenizedCorpus};

/// What the explainer is conditioned on during evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// The classifier's representation `r(x)`.
    #[default]
    True,
    /// An all-zero vector of the same length.
    Zeroed,
}

/// One test example: prediction, decoded explanation and its scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedExample {
    pub id: String,
    pub label: usize,
    pub predicted: usize,
    pub explanation: String,
    pub scores: EntryScores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub variant: Variant,
    pub conditioning: Conditioning,
    pub beam_width: usize,
    pub num_examples: usize,
    pub accuracy: f64,
    pub bleu: f64,
    pub meteor_lite: f64,
    pub cider: Option<f64>,
    pub examples: Vec<EvaluatedExample>,
}

pub fn evaluate(
    classifier: &Classifier,
    explainer: &Explainer,
    records: &[DatasetRecord],
    variant: Variant,
    beam_width: usize,
) -> Result<EvaluationReport> {
    evaluate_with(
        classifier,
        explainer,
        records,
        variant,
        beam_width,
        Conditioning::True,
    )
}

/// Classifies every record, decodes one explanation per record and scores
/// it against all of the record's references.
pub fn evaluate_with(
    classifier: &Classifier,
    explainer: &Explainer,
    records: &[DatasetRecord],
    variant: Variant,
    beam_width: usize,
    conditioning: Conditioning,
) -> Result<EvaluationReport> {
    if records.is_empty() {
        return Err(Error::arg("evaluation needs at least one record"));
    }
    let r_dim = classifier
        .config()
        .representation_dim(variant.representation());
    if r_dim != explainer.config().r_dim {
        return Err(Error::Config(format!(
            "variant {variant} produces r(x) of length {r_dim} but the explainer expects {}",
            explainer.config().r_dim
        )));
    }

    let xs: Vec<&[f64]> = records.iter().map(|r| r.features.as_slice()).collect();
    let acts = classifier.forward_batch(&xs)?;

    let mut predicted = Vec::with_capacity(records.len());
    let mut explanations = Vec::with_capacity(records.len());
    let mut entries = Vec::with_capacity(records.len());
    for (record, act) in records.iter().zip(&acts) {
        let mut r = representation(act, variant.representation());
        if conditioning == Conditioning::Zeroed {
            r.iter_mut().for_each(|v| *v = 0.0);
        }
        let tokens = explainer.decode(&r, beam_width)?;
        let text = explainer.render(&tokens);
        let mut candidate = tokenize(&text);
        if candidate.is_empty() {
            candidate.push(".".to_string());
        }
        entries.push(CorpusEntry {
            candidate,
            references: record.explanations.iter().map(|e| tokenize(e)).collect(),
        });
        predicted.push(argmax(act.class_probs()));
        explanations.push(text);
    }

    let report = score_corpus(&TokenizedCorpus::new(entries)?)?;
    let correct = records
        .iter()
        .zip(&predicted)
        .filter(|(r, &p)| r.label == p)
        .count();
    let examples = records
        .iter()
        .zip(predicted)
        .zip(explanations)
        .zip(report.per_entry)
        .map(|(((r, p), e), s)| EvaluatedExample {
            id: r.id.clone(),
            label: r.label,
            predicted: p,
            explanation: e,
            scores: s,
        })
        .collect();

    Ok(EvaluationReport {
        variant,
        conditioning,
        beam_width,
        num_examples: records.len(),
        accuracy: correct as f64 / records.len() as f64,
        bleu: report.bleu,
        meteor_lite: report.meteor_lite,
        cider: report.cider,
        examples,
    })
}
