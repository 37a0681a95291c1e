//! Sequential minimal optimization for the soft-margin dual
//!
//! ```text
//! min  1/2 a'Qa - e'a   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j K_ij
//! ```
//!
//! Working pairs use second-order selection (Fan, Chen & Lin 2005): `i`
//! is the maximal violator in I_up, `j` minimizes the second-order gain
//! estimate over I_low. Iteration stops once the maximal KKT violation
//! `m(a) - M(a)` falls below `tol`, which bounds every per-point KKT residual
//! `y_i f(x_i) - 1` by `tol`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{KernelParams, SvmError};

const TAU: f64 = 1e-12;

/// Kernel rows with a least-recently-used bound.
struct KernelCache<'a> {
    x: &'a [Vec<f64>],
    params: KernelParams,
    rows: HashMap<usize, (Vec<f64>, u64)>,
    capacity: usize,
    clock: u64,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a [Vec<f64>], params: KernelParams, cache_bytes: usize) -> Self {
        let row_bytes = (x.len() * std::mem::size_of::<f64>()).max(1);
        Self {
            x,
            params,
            rows: HashMap::new(),
            capacity: (cache_bytes / row_bytes).max(2),
            clock: 0,
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        self.clock += 1;
        let clock = self.clock;
        if !self.rows.contains_key(&i) {
            if self.rows.len() >= self.capacity {
                let oldest = *self
                    .rows
                    .iter()
                    .min_by_key(|(_, (_, t))| *t)
                    .map(|(k, _)| k)
                    .expect("cache is nonempty");
                self.rows.remove(&oldest);
            }
            let xi = &self.x[i];
            let row = self.x.iter().map(|xt| self.params.eval_unchecked(xi, xt)).collect();
            self.rows.insert(i, (row, clock));
        }
        let entry = self.rows.get_mut(&i).expect("row just inserted");
        entry.1 = clock;
        &entry.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SmoSolution {
    /// Decision value on training point `i`: `sum_j a_j y_j K_ij + b`.
    pub fn decision_on(&self, x: &[Vec<f64>], y: &[f64], p: &KernelParams, i: usize) -> f64 {
        self.alpha
            .iter()
            .zip(y)
            .zip(x)
            .filter(|((a, _), _)| **a > 0.0)
            .map(|((a, yj), xj)| a * yj * p.eval_unchecked(xj, &x[i]))
            .sum::<f64>()
            + self.bias
    }
}

/// Dual objective `sum a - 1/2 sum_ij a_i a_j y_i y_j K_ij` (to be maximized).
pub fn dual_objective(x: &[Vec<f64>], y: &[f64], alpha: &[f64], p: &KernelParams) -> f64 {
    let n = x.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if alpha[j] != 0.0 {
                quad += alpha[i] * alpha[j] * y[i] * y[j] * p.eval_unchecked(&x[i], &x[j]);
            }
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

fn check_problem(x: &[Vec<f64>], y: &[f64], p: &KernelParams) -> Result<(), SvmError> {
    p.validate()?;
    if x.len() != y.len() || x.is_empty() {
        return Err(SvmError::Argument(format!(
            "need matching nonempty X and y, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(SvmError::Argument("ragged feature vectors".into()));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(SvmError::Argument("labels must be +1 or -1".into()));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(SvmError::Argument("both classes must be present".into()));
    }
    Ok(())
}

/// Solve the binary dual. Runs at most `max_passes * max(n, 100)` pair
/// updates; on exhaustion the last iterate is returned with
/// `converged = false`. Pair selection is deterministic (ties to the lower
/// index), so no seed is involved.
pub fn smo_solve(
    x: &[Vec<f64>],
    y: &[f64],
    p: &KernelParams,
    max_passes: usize,
    cache_bytes: usize,
) -> Result<SmoSolution, SvmError> {
    check_problem(x, y, p)?;
    let n = x.len();
    let c = p.c;
    let mut cache = KernelCache::new(x, *p, cache_bytes);
    let diag: Vec<f64> = x.iter().map(|xi| p.eval_unchecked(xi, xi)).collect();
    let mut alpha = vec![0.0f64; n];
    // G = Q a - e
    let mut grad = vec![-1.0f64; n];

    let is_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let is_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let max_iter = max_passes.max(1).saturating_mul(n.max(100));
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // i: maximal -y_t G_t over I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if is_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        // j: second-order choice over I_low; gmax2 tracks max y_t G_t there
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        if i != usize::MAX {
            let ki = cache.row(i).to_vec();
            for t in 0..n {
                if !is_low(alpha[t], y[t]) {
                    continue;
                }
                let yg = y[t] * grad[t];
                if yg > gmax2 {
                    gmax2 = yg;
                }
                let b = gmax + yg;
                if b > 0.0 {
                    let mut a = diag[i] + diag[t] - 2.0 * ki[t];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj < best_obj {
                        best_obj = obj;
                        j = t;
                    }
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax + gmax2 < p.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let ki = cache.row(i).to_vec();
        let kj = cache.row(j).to_vec();
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let kij = ki[j];
        if y[i] != y[j] {
            let mut quad = diag[i] + diag[j] - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = diag[i] + diag[j] - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        for t in 0..n {
            // Q_ti = y_t y_i K_ti
            grad[t] += y[t] * (y[i] * ki[t] * dai + y[j] * kj[t] * daj);
        }
    }

    Ok(SmoSolution {
        bias: bias_from_gradient(&alpha, y, &grad, c),
        alpha,
        iterations,
        converged,
    })
}

/// `b = -mean(y_i G_i)` over free multipliers, or the midpoint of the
/// feasible interval when none is free.
fn bias_from_gradient(alpha: &[f64], y: &[f64], grad: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0f64);
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let r = if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    };
    -r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(c: f64) -> KernelParams {
        KernelParams {
            degree: 1,
            gamma: 1.0,
            coef0: 0.0,
            c,
            tol: 1e-6,
        }
    }

    #[test]
    fn symmetric_pair_has_zero_bias() {
        let x = vec![vec![-1.0], vec![1.0]];
        let y = vec![-1.0, 1.0];
        let p = linear(10.0);
        let s = smo_solve(&x, &y, &p, 100, 1 << 20).unwrap();
        assert!(s.converged);
        assert!(s.bias.abs() < 1e-12);
        // a = 0.5 for both: w = 1, margins exactly 1
        assert!((s.alpha[0] - 0.5).abs() < 1e-12);
        assert!(s.decision_on(&x, &y, &p, 0) < 0.0);
        assert!(s.decision_on(&x, &y, &p, 1) > 0.0);
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(smo_solve(&x, &[1.0, 1.0], &linear(1.0), 10, 1 << 20).is_err());
        assert!(smo_solve(&x, &[1.0, 0.0], &linear(1.0), 10, 1 << 20).is_err());
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let x: Vec<Vec<f64>> = (0..300).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
        let y: Vec<f64> = (0..300).map(|i| if (i * 7919) % 13 < 6 { 1.0 } else { -1.0 }).collect();
        let mut p = linear(100.0);
        p.tol = 1e-9;
        // cap = 1 * max(n, 100) = 300 iterations
        let s = smo_solve(&x, &y, &p, 1, 1 << 20).unwrap();
        assert!(!s.converged);
        assert_eq!(s.iterations, 300);
        let eq: f64 = s.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        assert!(eq.abs() < 1e-9);
        assert!(s.alpha.iter().all(|&a| (0.0..=100.0).contains(&a)));
    }

    #[test]
    fn tiny_cache_gives_same_answer() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin(), (i as f64 * 0.5).cos()]).collect();
        let y: Vec<f64> = (0..40).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let p = KernelParams { degree: 3, gamma: 0.5, coef0: 1.0, c: 1.0, tol: 1e-6 };
        let big = smo_solve(&x, &y, &p, 100, 1 << 24).unwrap();
        let small = smo_solve(&x, &y, &p, 100, 1).unwrap();
        assert_eq!(big, small);
    }
}
