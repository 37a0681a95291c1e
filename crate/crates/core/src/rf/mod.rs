//! Random forest of CART trees: Gini splits on midpoints, bootstrap
//! bagging, `floor(sqrt(d))` candidate features per node, majority vote.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::NUM_CLASSES;
use crate::exec;
use crate::rng::{Domain, SeededRng};

#[derive(Debug, Error, PartialEq)]
pub enum RfError {
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// `None` means `floor(sqrt(n_features))`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
    /// Draw a bootstrap sample per tree; off trains every tree on all rows.
    pub bootstrap: bool,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 16,
            features_per_split: None,
            seed: 0,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        counts: [u32; NUM_CLASSES],
    },
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Internal {
                feature,
                left,
                right,
                ..
            } => [Some(*feature), left.max_feature(), right.max_feature()]
                .into_iter()
                .flatten()
                .max(),
        }
    }

    /// Class the reached leaf votes for (majority, ties to the lower index).
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { counts } => return argmax_first(counts),
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }
}

fn argmax_first(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub n_features: usize,
    pub config: RfConfig,
}

impl ForestModel {
    pub fn validate(&self) -> Result<(), RfError> {
        for (i, t) in self.trees.iter().enumerate() {
            if t.max_feature().is_some_and(|f| f >= self.n_features) {
                return Err(RfError::Argument(format!(
                    "tree {i} references a feature >= {}",
                    self.n_features
                )));
            }
        }
        Ok(())
    }
}

pub fn gini_impurity(labels: &[usize]) -> Result<f64, RfError> {
    if labels.is_empty() {
        return Err(RfError::Argument("gini of an empty set".into()));
    }
    let k = labels.iter().max().unwrap() + 1;
    let mut counts = vec![0u64; k];
    for &l in labels {
        counts[l] += 1;
    }
    Ok(gini_from_counts(&counts, labels.len() as u64))
}

fn gini_from_counts(counts: &[u64], n: u64) -> f64 {
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Size-weighted Gini of the two children.
    pub impurity: f64,
}

/// Best Gini split over `candidates` (all rows of `x`).
///
/// Thresholds are midpoints between consecutive distinct values; a row goes
/// left when `x[f] <= threshold`. Ties go to the lower feature index, then
/// the lower threshold. `None` when no split lowers the impurity.
pub fn best_split(x: &[Vec<f64>], y: &[usize], candidates: &[usize]) -> Option<Split> {
    let idx: Vec<usize> = (0..x.len()).collect();
    let mut sorted: Vec<usize> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    best_split_rows(x, y, &idx, &sorted, &mut Vec::new())
}

fn best_split_rows(
    x: &[Vec<f64>],
    y: &[usize],
    rows: &[usize],
    features: &[usize],
    buf: &mut Vec<(f64, usize)>,
) -> Option<Split> {
    let n = rows.len();
    if n < 2 {
        return None;
    }
    let mut parent = [0u64; NUM_CLASSES];
    for &r in rows {
        parent[y[r]] += 1;
    }
    let parent_gini = gini_from_counts(&parent, n as u64);
    if parent_gini <= 0.0 {
        return None;
    }

    let mut best: Option<Split> = None;
    for &f in features {
        buf.clear();
        buf.extend(rows.iter().map(|&r| (x[r][f], y[r])));
        buf.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0u64; NUM_CLASSES];
        for i in 0..n - 1 {
            left[buf[i].1] += 1;
            let (lo, hi) = (buf[i].0, buf[i + 1].0);
            if lo == hi {
                continue;
            }
            let nl = (i + 1) as u64;
            let nr = n as u64 - nl;
            let mut right = parent;
            for c in 0..NUM_CLASSES {
                right[c] -= left[c];
            }
            let weighted = (nl as f64 * gini_from_counts(&left, nl)
                + nr as f64 * gini_from_counts(&right, nr))
                / n as f64;
            if best.is_none_or(|b| weighted < b.impurity) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(Split {
                    feature: f,
                    threshold,
                    impurity: weighted,
                });
            }
        }
    }
    best.filter(|b| b.impurity < parent_gini - 1e-12)
}

fn check_xy(x: &[Vec<f64>], y: &[usize]) -> Result<usize, RfError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(RfError::Argument(format!(
            "need matching nonempty X and y, got {} rows and {} labels",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(RfError::Argument("ragged or empty feature vectors".into()));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(RfError::Argument(format!("label {bad} out of range")));
    }
    Ok(d)
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    max_depth: usize,
    k: usize,
    rng: SeededRng,
    buf: Vec<(f64, usize)>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> TreeNode {
        let mut counts = [0u32; NUM_CLASSES];
        for &r in &rows {
            counts[self.y[r]] += 1;
        }
        let leaf = TreeNode::Leaf { counts };
        if depth >= self.max_depth || rows.len() < 2 || counts.iter().filter(|&&c| c > 0).count() < 2 {
            return leaf;
        }
        let d = self.x[0].len();
        let mut features = self.rng.sample_indices(d, self.k);
        features.sort_unstable();
        let Some(split) = best_split_rows(self.x, self.y, &rows, &features, &mut self.buf) else {
            return leaf;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&r| self.x[r][split.feature] <= split.threshold);
        debug_assert!(!left.is_empty() && !right.is_empty());
        TreeNode::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(self.grow(left, depth + 1)),
            right: Box::new(self.grow(right, depth + 1)),
        }
    }
}

/// Train one tree with its own stream `(seed, tree_index)`.
pub fn fit_tree(x: &[Vec<f64>], y: &[usize], config: &RfConfig, tree_index: usize) -> Result<TreeNode, RfError> {
    let d = check_xy(x, y)?;
    let k = config
        .features_per_split
        .unwrap_or_else(|| (d as f64).sqrt().floor() as usize)
        .clamp(1, d);
    let mut rng = SeededRng::new(config.seed, Domain::Forest, tree_index as u64);
    let n = x.len();
    let rows: Vec<usize> = if config.bootstrap {
        (0..n).map(|_| rng.below(n)).collect()
    } else {
        (0..n).collect()
    };
    let mut g = Grower {
        x,
        y,
        max_depth: config.max_depth,
        k,
        rng,
        buf: Vec::with_capacity(n),
    };
    Ok(g.grow(rows, 0))
}

/// Trees are trained in parallel; each depends only on its own stream, so
/// the model is identical to a serial run.
pub fn fit_forest(x: &[Vec<f64>], y: &[usize], config: &RfConfig) -> Result<ForestModel, RfError> {
    let d = check_xy(x, y)?;
    if config.n_trees == 0 {
        return Err(RfError::Argument("n_trees must be >= 1".into()));
    }
    let trees = exec::try_map_range(config.n_trees, |t| fit_tree(x, y, config, t))?;
    Ok(ForestModel {
        trees,
        n_features: d,
        config: config.clone(),
    })
}

/// Majority vote over trees; ties go to the lowest class index.
pub fn forest_predict(model: &ForestModel, x: &[f64]) -> Result<(usize, [u32; NUM_CLASSES]), RfError> {
    if x.len() != model.n_features {
        return Err(RfError::Argument(format!(
            "expected {} features, got {}",
            model.n_features,
            x.len()
        )));
    }
    let mut votes = [0u32; NUM_CLASSES];
    for t in &model.trees {
        votes[t.predict(x)] += 1;
    }
    Ok((argmax_first(&votes), votes))
}

pub fn forest_predict_batch(model: &ForestModel, xs: &[Vec<f64>]) -> Result<Vec<usize>, RfError> {
    exec::try_map_range(xs.len(), |i| forest_predict(model, &xs[i]).map(|(c, _)| c))
}
