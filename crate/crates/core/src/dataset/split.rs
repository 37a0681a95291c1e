use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, CLASS_NAMES};
use crate::rng::{Domain, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const fn new(train: f64, validation: f64, test: f64) -> Self {
        Self {
            train,
            validation,
            test,
        }
    }

    /// 80/20 protocol used for the forest and the SVM.
    pub const TRAIN_TEST: Self = Self::new(0.8, 0.0, 0.2);
    /// 70/10/20 protocol used for the CNN.
    pub const TRAIN_VAL_TEST: Self = Self::new(0.7, 0.1, 0.2);

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let r = self.as_array();
        if r.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(DatasetError::Argument(format!(
                "split ratios must be non-negative, got {r:?}"
            )));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Argument(format!(
                "split ratios must sum to 1, got {r:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPartition {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Per-class part sizes by largest remainder. Every part with a nonzero
/// ratio receives at least one sample; `None` if `n` is too small for that.
pub fn part_sizes(n: usize, ratios: &SplitRatios) -> Option<[usize; 3]> {
    let r = ratios.as_array();
    let nonzero = r.iter().filter(|&&x| x > 0.0).count();
    if n < nonzero {
        return None;
    }
    let raw: Vec<f64> = r.iter().map(|x| x * n as f64).collect();
    let mut sizes = [0usize; 3];
    for i in 0..3 {
        sizes[i] = (raw[i] + 1e-9).floor() as usize;
    }
    let mut left = n.saturating_sub(sizes.iter().sum());
    let mut order: Vec<usize> = (0..3).filter(|&i| r[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - sizes[a] as f64;
        let fb = raw[b] - sizes[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    while let Some(empty) = (0..3).find(|&i| r[i] > 0.0 && sizes[i] == 0) {
        let donor = (0..3)
            .filter(|&i| sizes[i] > 1)
            .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))?;
        sizes[donor] -= 1;
        sizes[empty] += 1;
    }
    Some(sizes)
}

/// Stratified split of a label vector.
///
/// Each class's indices are shuffled with PCG-64 seeded by
/// `(seed, class index)`, then cut into train/validation/test by
/// [`part_sizes`]. Index lists come back sorted ascending.
pub fn stratified_split_labels(
    labels: &[usize],
    ratios: &SplitRatios,
    seed: u64,
) -> Result<SplitPartition, DatasetError> {
    ratios.validate()?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = SplitPartition {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let [n_train, n_val, _] = part_sizes(members.len(), ratios).ok_or_else(|| {
            DatasetError::Stratify {
                class: CLASS_NAMES
                    .get(class)
                    .map_or_else(|| class.to_string(), |s| s.to_string()),
                reason: format!(
                    "{} sample(s) cannot fill every nonzero part of {:?}",
                    members.len(),
                    ratios
                ),
            }
        })?;
        SeededRng::new(seed, Domain::Split, class as u64).shuffle(&mut members);
        out.train.extend_from_slice(&members[..n_train]);
        out.validation
            .extend_from_slice(&members[n_train..n_train + n_val]);
        out.test.extend_from_slice(&members[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn stratified_split(
    ds: &Dataset,
    ratios: &SplitRatios,
    seed: u64,
) -> Result<SplitPartition, DatasetError> {
    stratified_split_labels(&ds.labels(), ratios, seed)
}
