//! Polynomial-kernel support vector machines trained by SMO, combined
//! one-vs-one (or one-vs-rest) for multiclass problems.
//!
//! Inputs are standardized with statistics from the training rows and
//! rounded through `f32`, so every stored support vector survives the
//! little-endian `f32` matrix used for persistence bit for bit.

mod kernel;
mod smo;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::NUM_CLASSES;
use crate::exec;

pub use kernel::{poly_kernel, KernelParams};
pub use smo::{dual_objective, smo_solve, SmoSolution};

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    /// `1 / (n_features * var(X))` over the prepared training matrix.
    Scale,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    OneVsOne,
    OneVsRest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub degree: u32,
    pub gamma: Gamma,
    pub coef0: f64,
    pub c: f64,
    pub tol: f64,
    /// Pair updates are capped at `max_passes * max(n, 100)` per machine.
    pub max_passes: usize,
    pub strategy: Strategy,
    pub standardize: bool,
    /// Kernel row cache per machine, in MiB.
    pub cache_mb: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            gamma: Gamma::Scale,
            coef0: 0.0,
            c: 1.0,
            tol: 1e-3,
            max_passes: 1000,
            strategy: Strategy::OneVsOne,
            standardize: true,
            cache_mb: 64,
        }
    }
}

/// Per-feature affine map to mean 0, std 1 (population std; constant
/// features keep scale 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Result<Self, SvmError> {
        let d = check_rows(x)?;
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < 1e-12 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub support_vectors: Vec<Vec<f64>>,
    /// Row of each support vector in the matrix the machine was fitted on
    /// (for machines inside an [`SvmModel`], the full training matrix).
    pub sv_indices: Vec<usize>,
    /// `alpha_i * y_i` per support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub params: KernelParams,
    pub converged: bool,
    pub iterations: usize,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, c)| c * self.params.eval_unchecked(sv, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict_sign(&self, x: &[f64]) -> f64 {
        if self.decision(x) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Fit one soft-margin machine; `y` holds +1/-1.
pub fn smo_fit_binary(
    x: &[Vec<f64>],
    y: &[f64],
    p: &KernelParams,
    max_passes: usize,
) -> Result<BinarySvm, SvmError> {
    smo_fit_binary_cached(x, y, p, max_passes, SvmConfig::default().cache_mb << 20)
}

fn smo_fit_binary_cached(
    x: &[Vec<f64>],
    y: &[f64],
    p: &KernelParams,
    max_passes: usize,
    cache_bytes: usize,
) -> Result<BinarySvm, SvmError> {
    let sol = smo_solve(x, y, p, max_passes, cache_bytes)?;
    let mut m = BinarySvm {
        support_vectors: Vec::new(),
        sv_indices: Vec::new(),
        dual_coefs: Vec::new(),
        bias: sol.bias,
        params: *p,
        converged: sol.converged,
        iterations: sol.iterations,
    };
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            m.support_vectors.push(x[i].clone());
            m.sv_indices.push(i);
            m.dual_coefs.push(a * y[i]);
        }
    }
    Ok(m)
}

/// The two sides of one machine: `positive` gets label +1; `negative` is
/// the opposing class, or every other class when `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPair {
    pub positive: usize,
    pub negative: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub strategy: Strategy,
    pub classes: Vec<usize>,
    pub class_pairs: Vec<ClassPair>,
    pub machines: Vec<BinarySvm>,
    pub n_features: usize,
    pub standardizer: Option<Standardizer>,
    pub params: KernelParams,
}

fn check_rows(x: &[Vec<f64>]) -> Result<usize, SvmError> {
    let Some(first) = x.first() else {
        return Err(SvmError::Argument("empty training matrix".into()));
    };
    let d = first.len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(SvmError::Argument("ragged or empty feature vectors".into()));
    }
    Ok(d)
}

fn observed_classes(y: &[usize]) -> Result<Vec<usize>, SvmError> {
    if let Some(&bad) = y.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(SvmError::Argument(format!("label {bad} out of range")));
    }
    let mut classes: Vec<usize> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(SvmError::Argument(format!(
            "need at least 2 classes, found {}",
            classes.len()
        )));
    }
    Ok(classes)
}

/// Train one machine per pair on already-prepared features. One-vs-one pairs
/// come in ascending `(a, b)` order and see only their two classes;
/// one-vs-rest machines come in class order and see every row. Machines
/// train in parallel.
pub fn fit_multiclass(
    x: &[Vec<f64>],
    y: &[usize],
    p: &KernelParams,
    strategy: Strategy,
    max_passes: usize,
    cache_bytes: usize,
) -> Result<SvmModel, SvmError> {
    let d = check_rows(x)?;
    if x.len() != y.len() {
        return Err(SvmError::Argument(format!(
            "{} rows but {} labels",
            x.len(),
            y.len()
        )));
    }
    p.validate()?;
    let classes = observed_classes(y)?;
    let class_pairs: Vec<ClassPair> = match strategy {
        Strategy::OneVsOne => {
            let mut v = Vec::new();
            for (i, &a) in classes.iter().enumerate() {
                for &b in &classes[i + 1..] {
                    v.push(ClassPair {
                        positive: a,
                        negative: Some(b),
                    });
                }
            }
            v
        }
        Strategy::OneVsRest => classes
            .iter()
            .map(|&c| ClassPair {
                positive: c,
                negative: None,
            })
            .collect(),
    };
    let machines = exec::try_map_range(class_pairs.len(), |k| {
        let pair = class_pairs[k];
        let rows: Vec<usize> = (0..y.len())
            .filter(|&i| pair.negative.is_none_or(|b| y[i] == b) || y[i] == pair.positive)
            .collect();
        let xs: Vec<Vec<f64>> = rows.iter().map(|&i| x[i].clone()).collect();
        let ys: Vec<f64> = rows
            .iter()
            .map(|&i| if y[i] == pair.positive { 1.0 } else { -1.0 })
            .collect();
        let mut m = smo_fit_binary_cached(&xs, &ys, p, max_passes, cache_bytes)?;
        for idx in &mut m.sv_indices {
            *idx = rows[*idx];
        }
        Ok(m)
    })?;
    Ok(SvmModel {
        strategy,
        classes,
        class_pairs,
        machines,
        n_features: d,
        standardizer: None,
        params: *p,
    })
}

fn round_f32(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

/// Standardize (optionally), resolve gamma and train.
pub fn fit_svm(x: &[Vec<f64>], y: &[usize], config: &SvmConfig) -> Result<SvmModel, SvmError> {
    check_rows(x)?;
    let standardizer = if config.standardize {
        Some(Standardizer::fit(x)?)
    } else {
        None
    };
    let prepared: Vec<Vec<f64>> = exec::map(x, |row| match &standardizer {
        Some(s) => round_f32(s.apply(row)),
        None => round_f32(row.clone()),
    });
    let gamma = match config.gamma {
        Gamma::Value(g) => g,
        Gamma::Scale => scale_gamma(&prepared),
    };
    let p = KernelParams {
        degree: config.degree,
        gamma,
        coef0: config.coef0,
        c: config.c,
        tol: config.tol,
    };
    let mut model = fit_multiclass(
        &prepared,
        y,
        &p,
        config.strategy,
        config.max_passes,
        config.cache_mb.max(1) << 20,
    )?;
    model.standardizer = standardizer;
    Ok(model)
}

/// `1 / (d * var)` with the variance taken over every entry of `x`;
/// a constant matrix gives 1.
pub fn scale_gamma(x: &[Vec<f64>]) -> f64 {
    let d = x.first().map_or(0, Vec::len);
    let count = (x.len() * d) as f64;
    if count == 0.0 {
        return 1.0;
    }
    let mean = x.iter().flatten().sum::<f64>() / count;
    let var = x.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    if var > 0.0 {
        1.0 / (d as f64 * var)
    } else {
        1.0
    }
}

impl SvmModel {
    /// Input mapped the same way the training rows were.
    pub fn prepare(&self, x: &[f64]) -> Vec<f64> {
        match &self.standardizer {
            Some(s) => round_f32(s.apply(x)),
            None => round_f32(x.to_vec()),
        }
    }

    /// Decision value of every machine, in `class_pairs` order.
    pub fn decisions(&self, x: &[f64]) -> Result<Vec<f64>, SvmError> {
        if x.len() != self.n_features {
            return Err(SvmError::Argument(format!(
                "expected {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        let z = self.prepare(x);
        Ok(self.machines.iter().map(|m| m.decision(&z)).collect())
    }

    pub fn converged(&self) -> bool {
        self.machines.iter().all(|m| m.converged)
    }

    pub fn validate(&self) -> Result<(), SvmError> {
        if self.class_pairs.len() != self.machines.len() {
            return Err(SvmError::Argument("class pair and machine counts differ".into()));
        }
        for m in &self.machines {
            if m.support_vectors.len() != m.dual_coefs.len()
                || m.support_vectors.iter().any(|sv| sv.len() != self.n_features)
            {
                return Err(SvmError::Argument("machine shape does not match the model".into()));
            }
        }
        if let Some(s) = &self.standardizer {
            if s.mean.len() != self.n_features || s.scale.len() != self.n_features {
                return Err(SvmError::Argument("standardizer width does not match".into()));
            }
        }
        Ok(())
    }
}

/// Combine machine outputs into `(class, votes)`.
///
/// One-vs-one: each machine votes for `positive` when its decision is
/// `>= 0`, else for `negative`. Among classes tied on votes, the one whose
/// winning machines have the largest summed `|decision|` wins, then the
/// lowest index. One-vs-rest: a machine votes when its decision is `>= 0`
/// and the class with the largest decision wins (lowest index on ties).
pub fn combine_decisions(
    strategy: Strategy,
    pairs: &[ClassPair],
    decisions: &[f64],
) -> (usize, [u32; NUM_CLASSES]) {
    let mut votes = [0u32; NUM_CLASSES];
    match strategy {
        Strategy::OneVsOne => {
            let mut margin = [0.0f64; NUM_CLASSES];
            for (pair, &f) in pairs.iter().zip(decisions) {
                let winner = if f >= 0.0 {
                    pair.positive
                } else {
                    pair.negative.expect("one-vs-one pair has two classes")
                };
                votes[winner] += 1;
                margin[winner] += f.abs();
            }
            let mut best = 0;
            for c in 1..NUM_CLASSES {
                if votes[c] > votes[best] || (votes[c] == votes[best] && margin[c] > margin[best]) {
                    best = c;
                }
            }
            (best, votes)
        }
        Strategy::OneVsRest => {
            let mut best: Option<(usize, f64)> = None;
            for (pair, &f) in pairs.iter().zip(decisions) {
                if f >= 0.0 {
                    votes[pair.positive] += 1;
                }
                if best.is_none_or(|(c, b)| f > b || (f == b && pair.positive < c)) {
                    best = Some((pair.positive, f));
                }
            }
            (best.map_or(0, |(c, _)| c), votes)
        }
    }
}

pub fn svm_predict(model: &SvmModel, x: &[f64]) -> Result<(usize, [u32; NUM_CLASSES]), SvmError> {
    let f = model.decisions(x)?;
    Ok(combine_decisions(model.strategy, &model.class_pairs, &f))
}

pub fn svm_predict_batch(model: &SvmModel, xs: &[Vec<f64>]) -> Result<Vec<usize>, SvmError> {
    exec::try_map_range(xs.len(), |i| svm_predict(model, &xs[i]).map(|(c, _)| c))
}
