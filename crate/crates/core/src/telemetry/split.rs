use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Result, TelemetryError};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Self {
        Self { train, validation, test }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }

    fn validate(&self) -> Result<()> {
        let r = self.as_array();
        let ok = r.iter().all(|v| v.is_finite() && *v >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(TelemetryError::BadRatios(r))
        }
    }
}

/// Disjoint index sets that partition a dataset. Each list is ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub ratios: SplitRatios,
    pub seed: u64,
    pub stratify: bool,
}

/// Seeded random split. With `stratify`, each label (at centimeter
/// resolution) is split on its own, in ascending label order, so per-label
/// counts stay within one sample of `ratio * count`.
pub fn split_dataset(
    n_samples: usize,
    labels: &[f64],
    ratios: SplitRatios,
    seed: u64,
    stratify: bool,
) -> Result<DatasetSplit> {
    ratios.validate()?;
    if n_samples == 0 {
        return Err(TelemetryError::EmptyDataset);
    }
    if labels.len() != n_samples {
        return Err(TelemetryError::LengthMismatch { expected: n_samples, actual: labels.len() });
    }

    let groups: Vec<Vec<usize>> = if stratify {
        let mut by_label: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &y) in labels.iter().enumerate() {
            by_label.entry((y * 100.0).round() as i64).or_default().push(i);
        }
        by_label.into_values().collect()
    } else {
        vec![(0..n_samples).collect()]
    };

    let mut rng = SeededRng::new(seed);
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut group in groups {
        rng.shuffle(&mut group);
        let count = group.len();
        let n_train = ((ratios.train * count as f64).round() as usize).min(count);
        let n_val = ((ratios.validation * count as f64).round() as usize).min(count - n_train);
        train.extend_from_slice(&group[..n_train]);
        validation.extend_from_slice(&group[n_train..n_train + n_val]);
        test.extend_from_slice(&group[n_train + n_val..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit { train, validation, test, ratios, seed, stratify })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn per_label_counts(idx: &[usize], labels: &[f64]) -> BTreeMap<i64, usize> {
        let mut m = BTreeMap::new();
        for &i in idx {
            *m.entry((labels[i] * 100.0).round() as i64).or_insert(0) += 1;
        }
        m
    }

    #[test]
    fn few_shot_ratios_per_label() {
        let labels: Vec<f64> = (6..=10).flat_map(|d| std::iter::repeat_n(d as f64, 10)).collect();
        let s = split_dataset(labels.len(), &labels, SplitRatios::new(0.1, 0.1, 0.8), 3, true).unwrap();
        for (_, c) in per_label_counts(&s.train, &labels) {
            assert_eq!(c, 1);
        }
        for (_, c) in per_label_counts(&s.validation, &labels) {
            assert_eq!(c, 1);
        }
        for (_, c) in per_label_counts(&s.test, &labels) {
            assert_eq!(c, 8);
        }
    }

    #[test]
    fn all_train_boundary() {
        let labels = vec![1.0; 9];
        let s = split_dataset(9, &labels, SplitRatios::new(1.0, 0.0, 0.0), 0, false).unwrap();
        assert_eq!(s.train, (0..9).collect::<Vec<_>>());
        assert!(s.validation.is_empty() && s.test.is_empty());
    }

    #[test]
    fn theatre_table_sizes() {
        let labels: Vec<f64> = (0..7200).map(|i| (i / 60) as f64).collect();
        let r = SplitRatios::new(5280.0 / 7200.0, 0.0, 1920.0 / 7200.0);
        let s = split_dataset(7200, &labels, r, 1, false).unwrap();
        assert_eq!(s.train.len(), 5280);
        assert_eq!(s.test.len(), 1920);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            split_dataset(3, &[1.0; 3], SplitRatios::new(0.5, 0.5, 0.5), 0, false),
            Err(TelemetryError::BadRatios(_))
        ));
        assert!(matches!(
            split_dataset(2, &[1.0; 2], SplitRatios::new(-0.1, 0.6, 0.5), 0, false),
            Err(TelemetryError::BadRatios(_))
        ));
        assert!(matches!(
            split_dataset(0, &[], SplitRatios::new(1.0, 0.0, 0.0), 0, false),
            Err(TelemetryError::EmptyDataset)
        ));
        assert!(matches!(
            split_dataset(3, &[1.0; 2], SplitRatios::new(1.0, 0.0, 0.0), 0, false),
            Err(TelemetryError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let labels: Vec<f64> = (0..100).map(|i| (i % 7) as f64).collect();
        let r = SplitRatios::new(0.6, 0.2, 0.2);
        assert_eq!(split_dataset(100, &labels, r, 5, true).unwrap(), split_dataset(100, &labels, r, 5, true).unwrap());
        assert_ne!(split_dataset(100, &labels, r, 5, true).unwrap(), split_dataset(100, &labels, r, 6, true).unwrap());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 1usize..300, seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0,
                                stratify in any::<bool>(), n_labels in 1usize..12) {
            let (a, b) = if a + b > 1.0 { (a / 2.0, b / 2.0) } else { (a, b) };
            let r = SplitRatios::new(a, b, 1.0 - a - b);
            let labels: Vec<f64> = (0..n).map(|i| ((i * 7919) % n_labels) as f64 * 0.5).collect();
            let s = split_dataset(n, &labels, r, seed, stratify).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn stratified_counts_within_one(n in 1usize..400, seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0,
                                        n_labels in 1usize..9) {
            let (a, b) = if a + b > 1.0 { (a / 2.0, b / 2.0) } else { (a, b) };
            let r = SplitRatios::new(a, b, 1.0 - a - b);
            let labels: Vec<f64> = (0..n).map(|i| ((i * i + 3) % n_labels) as f64).collect();
            let s = split_dataset(n, &labels, r, seed, true).unwrap();
            let totals = per_label_counts(&(0..n).collect::<Vec<_>>(), &labels);
            for (part, ratio) in [(&s.train, r.train), (&s.validation, r.validation), (&s.test, r.test)] {
                let counts = per_label_counts(part, &labels);
                for (label, &total) in &totals {
                    let got = *counts.get(label).unwrap_or(&0) as f64;
                    prop_assert!((got - ratio * total as f64).abs() <= 1.0 + 1e-9);
                }
            }
        }
    }
}
