use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, DatasetRecord};

const COLORS: &[&str] = &[
    "black", "brown", "red", "yellow", "blue", "white", "gray", "green", "buff", "spotted",
];
const PARTS: &[&str] = &[
    "belly", "crown", "wing", "tail", "breast", "throat", "beak", "nape",
];

/// Prototypes are rescaled until every pair is at least this many noise
/// deviations apart.
pub const SEPARATION_FACTOR: f64 = 10.0;

/// Parameters of the synthetic classify-and-explain generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub attributes_per_class: usize,
    /// Attribute phrases to draw from; empty means the built-in
    /// color-and-part list.
    pub attributes: Vec<String>,
    pub examples_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 5,
            feature_dim: 16,
            noise_std: 0.5,
            attributes_per_class: 2,
            attributes: Vec::new(),
            examples_per_class: 40,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.feature_dim == 0 || self.examples_per_class == 0 {
            return Err(Error::arg(
                "num_classes, feature_dim and examples_per_class must be positive",
            ));
        }
        if self.attributes_per_class == 0 {
            return Err(Error::arg("attributes_per_class must be positive"));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::arg(format!(
                "noise_std must be finite and non-negative, got {}",
                self.noise_std
            )));
        }
        let needed = self.num_classes * self.attributes_per_class;
        let available = self.attribute_pool().len();
        if available < needed {
            return Err(Error::arg(format!(
                "{needed} attributes needed but only {available} available"
            )));
        }
        Ok(())
    }

    /// Candidate attribute phrases, deduplicated in first-seen order.
    pub fn attribute_pool(&self) -> Vec<String> {
        let raw: Vec<String> = if self.attributes.is_empty() {
            COLORS
                .iter()
                .flat_map(|c| PARTS.iter().map(move |p| format!("{c} {p}")))
                .collect()
        } else {
            self.attributes.clone()
        };
        let mut pool: Vec<String> = Vec::with_capacity(raw.len());
        for a in raw {
            let a = a.trim().to_string();
            if !a.is_empty() && !pool.contains(&a) {
                pool.push(a);
            }
        }
        pool
    }
}

/// A generated dataset together with the class prototypes it was drawn from.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub prototypes: Vec<Vec<f64>>,
    pub class_attributes: Vec<Vec<String>>,
}

fn template(attributes: &[String]) -> String {
    let mut s = String::from("this bird has");
    for (i, a) in attributes.iter().enumerate() {
        if i > 0 {
            s.push_str(" and");
        }
        s.push_str(" a ");
        s.push_str(a);
    }
    s.push('.');
    s
}

fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}

/// Generates `examples_per_class` noisy copies of a Gaussian prototype per
/// class, each explained by the class's fixed attribute template.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let standard = Normal::new(0.0, 1.0).expect("unit normal");

    let mut prototypes: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..spec.feature_dim)
                .map(|_| standard.sample(&mut rng))
                .collect()
        })
        .collect();
    if spec.num_classes > 1 {
        let target = SEPARATION_FACTOR * spec.noise_std;
        let d = min_pairwise_distance(&prototypes);
        if d == 0.0 {
            return Err(Error::arg("prototype draw produced coincident classes"));
        }
        if d < target {
            let k = target / d;
            for v in prototypes.iter_mut().flatten() {
                *v *= k;
            }
        }
    }

    let mut pool = spec.attribute_pool();
    pool.shuffle(&mut rng);
    let class_attributes: Vec<Vec<String>> = pool
        .chunks(spec.attributes_per_class)
        .take(spec.num_classes)
        .map(<[String]>::to_vec)
        .collect();

    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut records = Vec::with_capacity(spec.num_classes * spec.examples_per_class);
    for i in 0..spec.examples_per_class {
        for (class, proto) in prototypes.iter().enumerate() {
            let features = proto
                .iter()
                .map(|&p| {
                    if spec.noise_std == 0.0 {
                        p
                    } else {
                        p + noise.sample(&mut rng)
                    }
                })
                .collect();
            records.push(DatasetRecord {
                id: format!("c{class}-{i:04}"),
                features,
                label: class,
                explanations: vec![template(&class_attributes[class])],
            });
        }
    }

    Ok(SyntheticData {
        dataset: Dataset::new(spec.num_classes, records)?,
        prototypes,
        class_attributes,
    })
}

/// Index of the prototype closest to `x` in Euclidean distance.
pub fn nearest_prototype(prototypes: &[Vec<f64>], x: &[f64]) -> usize {
    let dist = |p: &Vec<f64>| -> f64 { p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum() };
    let mut best = 0;
    for (i, p) in prototypes.iter().enumerate().skip(1) {
        if dist(p) < dist(&prototypes[best]) {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    #[test]
    fn default_spec_counts() {
        let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
        assert_eq!(data.dataset.len(), 200);
        let mut per_class = BTreeMap::new();
        for r in data.dataset.records() {
            *per_class.entry(r.label).or_insert(0) += 1;
        }
        assert!(per_class.values().all(|&n| n == 40));
    }

    #[test]
    fn zero_noise_gives_identical_features() {
        let spec = SyntheticSpec {
            noise_std: 0.0,
            examples_per_class: 5,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        for r in data.dataset.records() {
            assert_eq!(r.features, data.prototypes[r.label]);
        }
    }

    #[test]
    fn explanations_follow_the_template() {
        let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let mut by_class: BTreeMap<usize, BTreeSet<Vec<String>>> = BTreeMap::new();
        for r in data.dataset.records() {
            assert!(r.explanations.iter().all(|e| e.ends_with('.')));
            by_class
                .entry(r.label)
                .or_default()
                .insert(r.explanations.clone());
        }
        assert!(by_class.values().all(|s| s.len() == 1));
        let first = data.dataset.records()[0].explanations[0].clone();
        assert!(first.starts_with("this bird has a "));
        assert!(first.contains(" and a "));
    }

    #[test]
    fn classes_get_disjoint_attributes() {
        let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let all: Vec<&String> = data.class_attributes.iter().flatten().collect();
        let unique: BTreeSet<&String> = all.iter().copied().collect();
        assert_eq!(all.len(), unique.len());
    }

    #[test]
    fn prototypes_are_separated_and_oracle_is_perfect() {
        let spec = SyntheticSpec::default();
        let data = generate_synthetic(&spec).unwrap();
        assert!(min_pairwise_distance(&data.prototypes) >= SEPARATION_FACTOR * spec.noise_std - 1e-9);
        for r in data.dataset.records() {
            assert_eq!(nearest_prototype(&data.prototypes, &r.features), r.label);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let b = generate_synthetic(&SyntheticSpec::default()).unwrap();
        assert_eq!(a.dataset, b.dataset);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad_noise = SyntheticSpec {
            noise_std: -1.0,
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate_synthetic(&bad_noise), Err(Error::InvalidArgument(_))));
        let few_words = SyntheticSpec {
            attributes: vec!["red crown".into(), "blue tail".into(), "red crown".into()],
            num_classes: 2,
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate_synthetic(&few_words), Err(Error::InvalidArgument(_))));
    }
}
