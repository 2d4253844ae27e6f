use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::DatasetRecord;

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<DatasetRecord>,
    pub validation: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

/// Stratified train/validation/test split.
///
/// Each class is shuffled with a generator seeded from `seed`; validation
/// and test take `round(fraction * n)` of its records (at least one each)
/// and training keeps the rest. Records keep their input order within
/// each split.
pub fn split(records: &[DatasetRecord], fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
        return Err(Error::arg(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0u8; records.len()];
    for (class, mut indices) in by_class {
        let n = indices.len();
        if n < 3 {
            return Err(Error::Validation(format!(
                "class {class} has {n} records, fewer than the 3 splits"
            )));
        }
        indices.shuffle(&mut rng);
        let n_val = ((fractions[1] * n as f64).round() as usize).max(1);
        let n_test = ((fractions[2] * n as f64).round() as usize).max(1);
        if n_val + n_test >= n {
            return Err(Error::Validation(format!(
                "class {class} has too few records ({n}) to leave any for training"
            )));
        }
        for &i in &indices[..n_val] {
            assignment[i] = 1;
        }
        for &i in &indices[n_val..n_val + n_test] {
            assignment[i] = 2;
        }
    }

    let mut splits = Splits {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (r, &a) in records.iter().zip(&assignment) {
        match a {
            0 => splits.train.push(r.clone()),
            1 => splits.validation.push(r.clone()),
            _ => splits.test.push(r.clone()),
        }
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn records(classes: usize, per_class: usize) -> Vec<DatasetRecord> {
        (0..classes * per_class)
            .map(|i| DatasetRecord {
                id: format!("r{i}"),
                features: vec![i as f64],
                label: i % classes,
                explanations: vec!["x.".into()],
            })
            .collect()
    }

    #[test]
    fn sizes_for_100_records() {
        let s = split(&records(5, 20), [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (80, 10, 10)
        );
    }

    #[test]
    fn exhaustive_disjoint_and_stratified() {
        let input = records(4, 10);
        let s = split(&input, [0.6, 0.2, 0.2], 9).unwrap();
        let mut seen = HashSet::new();
        for r in s.train.iter().chain(&s.validation).chain(&s.test) {
            assert!(seen.insert(r.id.clone()));
        }
        assert_eq!(seen.len(), input.len());
        for class in 0..4 {
            assert_eq!(s.test.iter().filter(|r| r.label == class).count(), 2);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let input = records(3, 12);
        let a = split(&input, [0.5, 0.25, 0.25], 4).unwrap();
        let b = split(&input, [0.5, 0.25, 0.25], 4).unwrap();
        assert_eq!(a, b);
        let c = split(&input, [0.5, 0.25, 0.25], 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_small_classes_and_bad_fractions() {
        assert!(matches!(
            split(&records(2, 2), [0.8, 0.1, 0.1], 0),
            Err(Error::Validation(_))
        ));
        assert!(split(&records(2, 10), [0.8, 0.1, 0.2], 0).is_err());
        assert!(split(&records(2, 10), [1.0, 0.0, 0.0], 0).is_err());
    }
}
