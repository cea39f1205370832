//! ℓ1-penalised logistic regression by cyclic coordinate descent.
//!
//! Objective: mean negative log-likelihood + `penalty · Σ|w_k|`, with an
//! unpenalised intercept. Each outer step forms the weighted least-squares approximation of the
//! log-likelihood at the current fit, minimises it with soft-thresholded
//! coordinate descent, then halves the step until the penalised objective
//! does not increase. Features are expected on a standardized scale.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    pub folds: usize,
    pub grid_size: usize,
    /// Smallest grid penalty as a fraction of `λ_max`.
    pub min_ratio: f64,
    /// Convergence threshold on the largest curvature-weighted squared
    /// coordinate change `h_k · Δ_k²` in a sweep.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub fold_seed: u64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            grid_size: 50,
            min_ratio: 1e-4,
            tolerance: 1e-7,
            max_sweeps: 1_000,
            fold_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Fitted,
    /// Smoothed class-rate fallback; no weights.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub kind: ModelKind,
    pub intercept: f64,
    /// Weights on the standardized feature scale; empty for constant models.
    pub weights: Vec<f64>,
    pub penalty: f64,
    pub positive_rate: f64,
    /// Mean validation log-loss per grid penalty, largest penalty first.
    pub cv_curve: Vec<(f64, f64)>,
}

impl LogisticModel {
    /// Laplace-smoothed class rate `(positives + 1) / (n + 2)`.
    pub fn constant(positives: usize, n: usize) -> Self {
        let p = (positives as f64 + 1.0) / (n as f64 + 2.0);
        Self {
            kind: ModelKind::Constant,
            intercept: logit(p),
            weights: Vec::new(),
            penalty: 0.0,
            positive_rate: if n == 0 { 0.0 } else { positives as f64 / n as f64 },
            cv_curve: Vec::new(),
        }
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Probability in the open interval (0, 1).
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(x)).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
    }

    pub fn nonzero_weights(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + e^η)` without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn soft_threshold(a: f64, penalty: f64) -> f64 {
    if a > penalty {
        a - penalty
    } else if a < -penalty {
        a + penalty
    } else {
        0.0
    }
}

const INTERCEPT_BOUND: f64 = 30.0;
/// Share of null deviance beyond which the penalty path stops: smaller
/// penalties only chase a (near-)separable training sample.
const SATURATED_DEVIANCE_RATIO: f64 = 0.999;

/// Rows of a standardized design restricted to `idx`.
struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    idx: &'a [usize],
}

impl Problem<'_> {
    fn n(&self) -> f64 {
        self.idx.len() as f64
    }

    fn n_features(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    fn mean_y(&self) -> f64 {
        self.idx.iter().map(|&i| self.y[i]).sum::<f64>() / self.n()
    }

    /// Largest absolute null-model gradient: the smallest penalty at which all
    /// weights are zero.
    fn lambda_max(&self) -> f64 {
        let ybar = self.mean_y();
        (0..self.n_features())
            .map(|k| {
                let g: f64 = self.idx.iter().map(|&i| self.x[i][k] * (self.y[i] - ybar)).sum();
                (g / self.n()).abs()
            })
            .fold(0.0, f64::max)
    }

    fn null_fit(&self) -> (f64, Vec<f64>) {
        let ybar = self.mean_y();
        (logit(ybar).clamp(-INTERCEPT_BOUND, INTERCEPT_BOUND), vec![0.0; self.n_features()])
    }

    fn nll_sum(&self, eta: &[f64]) -> f64 {
        self.idx
            .iter()
            .zip(eta)
            .map(|(&i, &e)| softplus(e) - self.y[i] * e)
            .sum()
    }

    fn objective(&self, eta: &[f64], w: &[f64], penalty: f64) -> f64 {
        self.nll_sum(eta) / self.n() + penalty * w.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Proximal Newton at one penalty, warm-started from `start`. Each outer
    /// step solves the weighted least-squares approximation by coordinate
    /// descent, then backtracks until the penalised objective does not
    /// increase.
    fn fit(&self, penalty: f64, lambda_max: f64, start: (f64, Vec<f64>), opts: &LassoOptions) -> (f64, Vec<f64>) {
        if penalty >= lambda_max {
            return self.null_fit();
        }
        let (mut b0, mut w) = start;
        let n = self.n();
        let m = self.idx.len();
        let mut eta: Vec<f64> = self
            .idx
            .iter()
            .map(|&i| b0 + w.iter().zip(&self.x[i]).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let mut obj = self.objective(&eta, &w, penalty);
        let mut weight = vec![0.0; m];
        let mut resid = vec![0.0; m];
        let mut xwx = vec![0.0; w.len()];

        for _ in 0..opts.max_sweeps {
            for (r, ((&i, &e), wt)) in self.idx.iter().zip(&eta).zip(weight.iter_mut()).enumerate() {
                let p = sigmoid(e);
                *wt = (p * (1.0 - p)).max(1e-5);
                resid[r] = (self.y[i] - p) / *wt;
            }
            let wsum: f64 = weight.iter().sum();
            for (k, slot) in xwx.iter_mut().enumerate() {
                *slot = self.idx.iter().zip(&weight).map(|(&i, wt)| wt * self.x[i][k] * self.x[i][k]).sum::<f64>() / n;
            }

            let (mut nb0, mut nw) = (b0, w.clone());
            let mut active_only = false;
            for _ in 0..opts.max_sweeps {
                let shift = resid.iter().zip(&weight).map(|(r, wt)| r * wt).sum::<f64>() / wsum;
                nb0 += shift;
                resid.iter_mut().for_each(|r| *r -= shift);
                let mut max_change = wsum / n * shift * shift;
                for k in 0..nw.len() {
                    if (active_only && nw[k] == 0.0) || xwx[k] <= 1e-12 {
                        continue;
                    }
                    let g = self
                        .idx
                        .iter()
                        .zip(&weight)
                        .zip(&resid)
                        .map(|((&i, wt), r)| wt * self.x[i][k] * r)
                        .sum::<f64>()
                        / n;
                    let target = soft_threshold(g + xwx[k] * nw[k], penalty) / xwx[k];
                    let delta = target - nw[k];
                    if delta == 0.0 {
                        continue;
                    }
                    for (r, &i) in resid.iter_mut().zip(self.idx) {
                        *r -= delta * self.x[i][k];
                    }
                    nw[k] = target;
                    max_change = max_change.max(xwx[k] * delta * delta);
                }
                if max_change < opts.tolerance {
                    if !active_only {
                        break;
                    }
                    active_only = false;
                } else {
                    active_only = true;
                }
            }
            nb0 = nb0.clamp(-INTERCEPT_BOUND, INTERCEPT_BOUND);

            let d0 = nb0 - b0;
            let dw: Vec<f64> = nw.iter().zip(&w).map(|(a, b)| a - b).collect();
            let deta: Vec<f64> = self
                .idx
                .iter()
                .map(|&i| d0 + dw.iter().zip(&self.x[i]).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand_w: Vec<f64> = w.iter().zip(&dw).map(|(a, d)| a + t * d).collect();
                let cand_eta: Vec<f64> = eta.iter().zip(&deta).map(|(e, d)| e + t * d).collect();
                let cand = self.objective(&cand_eta, &cand_w, penalty);
                if cand <= obj + 1e-15 {
                    b0 += t * d0;
                    w = cand_w;
                    eta = cand_eta;
                    obj = cand;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            let moved = dw
                .iter()
                .zip(&xwx)
                .fold(wsum / n * d0 * d0, |acc, (d, h)| acc.max(h * d * d))
                * t
                * t;
            if !accepted || moved < opts.tolerance {
                break;
            }
        }
        (b0, w)
    }

    /// Fraction of null deviance explained by `eta`.
    fn deviance_ratio(&self, eta_b0: f64, w: &[f64]) -> f64 {
        let null = self.null_fit();
        let null_loss = self.mean_log_loss(null.0, &null.1);
        if null_loss <= 0.0 {
            return 1.0;
        }
        1.0 - self.mean_log_loss(eta_b0, w) / null_loss
    }

    fn mean_log_loss(&self, b0: f64, w: &[f64]) -> f64 {
        let total: f64 = self
            .idx
            .iter()
            .map(|&i| {
                let eta = b0 + w.iter().zip(&self.x[i]).map(|(a, b)| a * b).sum::<f64>();
                let p = sigmoid(eta).clamp(1e-15, 1.0 - 1e-15);
                -(self.y[i] * p.ln() + (1.0 - self.y[i]) * (1.0 - p).ln())
            })
            .sum();
        total / self.n()
    }
}

/// Log-spaced penalties from `lambda_max` down to `lambda_max · min_ratio`.
pub fn penalty_grid(lambda_max: f64, size: usize, min_ratio: f64) -> Vec<f64> {
    if size <= 1 {
        return vec![lambda_max];
    }
    let log_hi = lambda_max.ln();
    let log_lo = (lambda_max * min_ratio).ln();
    (0..size)
        .map(|s| {
            if s == 0 {
                lambda_max
            } else {
                (log_hi + (log_lo - log_hi) * s as f64 / (size - 1) as f64).exp()
            }
        })
        .collect()
}

/// Smallest penalty at which every weight is zero for this data.
pub fn lambda_max(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let idx: Vec<usize> = (0..x.len()).collect();
    Problem { x, y, idx: &idx }.lambda_max()
}

/// Fits the model at a single penalty from a cold start.
pub fn fit_at_penalty(x: &[Vec<f64>], y: &[f64], penalty: f64, opts: &LassoOptions) -> LogisticModel {
    let idx: Vec<usize> = (0..x.len()).collect();
    let problem = Problem { x, y, idx: &idx };
    let positives = y.iter().filter(|&&v| v > 0.5).count();
    if positives == 0 || positives == y.len() {
        return LogisticModel::constant(positives, y.len());
    }
    let lmax = problem.lambda_max();
    let (b0, w) = problem.fit(penalty, lmax, problem.null_fit(), opts);
    LogisticModel {
        kind: ModelKind::Fitted,
        intercept: b0,
        weights: w,
        penalty,
        positive_rate: positives as f64 / y.len() as f64,
        cv_curve: Vec::new(),
    }
}

/// Cross-validated lasso-logistic fit.
///
/// `y` holds 0/1 labels. Single-class data yields the smoothed constant
/// model. The penalty minimising mean validation log-loss over `folds`
/// folds is refit on all rows.
pub fn fit_lasso_logistic(x: &[Vec<f64>], y: &[f64], opts: &LassoOptions) -> LogisticModel {
    let n = x.len();
    let positives = y.iter().filter(|&&v| v > 0.5).count();
    if n < 2 || positives == 0 || positives == n {
        return LogisticModel::constant(positives, n);
    }
    let all: Vec<usize> = (0..n).collect();
    let full = Problem { x, y, idx: &all };
    let lmax = full.lambda_max();
    let rate = positives as f64 / n as f64;
    if lmax <= 0.0 {
        let (b0, w) = full.null_fit();
        return LogisticModel {
            kind: ModelKind::Fitted,
            intercept: b0,
            weights: w,
            penalty: 0.0,
            positive_rate: rate,
            cv_curve: Vec::new(),
        };
    }
    let grid = penalty_grid(lmax, opts.grid_size.max(1), opts.min_ratio);

    let k = opts.folds.clamp(2, n);
    let mut order = all.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.fold_seed));
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }

    let mut loss = vec![0.0; grid.len()];
    // Paths stop once the training fit is saturated; only penalties reached
    // by every fold are compared.
    let mut path_len = grid.len();
    for fold in 0..k {
        let train: Vec<usize> = all.iter().copied().filter(|&i| fold_of[i] != fold).collect();
        let valid: Vec<usize> = all.iter().copied().filter(|&i| fold_of[i] == fold).collect();
        let train_p = Problem { x, y, idx: &train };
        let valid_p = Problem { x, y, idx: &valid };
        let train_pos = train.iter().filter(|&&i| y[i] > 0.5).count();
        if train_pos == 0 || train_pos == train.len() {
            let c = LogisticModel::constant(train_pos, train.len());
            let l = valid_p.mean_log_loss(c.intercept, &[]);
            loss.iter_mut().for_each(|v| *v += l);
            continue;
        }
        let fold_max = train_p.lambda_max();
        let mut current = train_p.null_fit();
        let mut fitted = 0;
        for (s, &penalty) in grid.iter().enumerate().take(path_len) {
            current = train_p.fit(penalty, fold_max, current, opts);
            loss[s] += valid_p.mean_log_loss(current.0, &current.1);
            fitted = s + 1;
            if train_p.deviance_ratio(current.0, &current.1) >= SATURATED_DEVIANCE_RATIO {
                break;
            }
        }
        path_len = path_len.min(fitted);
    }
    let cv_curve: Vec<(f64, f64)> =
        grid.iter().zip(&loss).take(path_len).map(|(&p, &l)| (p, l / k as f64)).collect();
    let mut best = 0;
    for s in 1..cv_curve.len() {
        if cv_curve[s].1 < cv_curve[best].1 {
            best = s;
        }
    }

    let mut current = full.null_fit();
    for &penalty in &grid[..=best] {
        current = full.fit(penalty, lmax, current, opts);
    }
    LogisticModel {
        kind: ModelKind::Fitted,
        intercept: current.0,
        weights: current.1,
        penalty: grid[best],
        positive_rate: rate,
        cv_curve,
    }
}
