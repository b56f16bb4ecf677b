//! Weighted LASSO by cyclic coordinate descent on the Gram matrix.
//!
//! The objective is `(1/n)‖y − Zβ‖² + λ Σ_i |g_i β_i|`. Coordinates with an
//! infinite weight are pinned at zero.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the penalty grid for one regression is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaGrid {
    /// `points` log-spaced values from `λ_max` down to `min_ratio · λ_max`.
    Auto { points: usize, min_ratio: f64 },
    /// Explicit descending values.
    Fixed { values: Vec<f64> },
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Auto {
            points: 50,
            min_ratio: 1e-3,
        }
    }
}

impl LambdaGrid {
    pub fn validate(&self) -> Result<()> {
        match self {
            LambdaGrid::Auto { points, min_ratio } => {
                if *points == 0 || !(*min_ratio > 0.0 && *min_ratio <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "auto lambda grid needs points >= 1 and min_ratio in (0, 1], got {points}, {min_ratio}"
                    )));
                }
            }
            LambdaGrid::Fixed { values } => {
                if values.is_empty() {
                    return Err(Error::InvalidParameter("lambda grid is empty".into()));
                }
                if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidParameter(
                        "lambda grid values must be >= 0".into(),
                    ));
                }
                if values.windows(2).any(|w| w[0] < w[1]) {
                    return Err(Error::InvalidParameter(
                        "lambda grid must be descending".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Concrete grid given the smallest penalty that zeroes every coefficient.
    pub fn resolve(&self, lambda_max: f64) -> Vec<f64> {
        match self {
            LambdaGrid::Fixed { values } => values.clone(),
            LambdaGrid::Auto { points, min_ratio } => log_grid(lambda_max, *min_ratio, *points),
        }
    }
}

pub fn log_grid(top: f64, min_ratio: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![top];
    }
    let step = min_ratio.ln() / (points - 1) as f64;
    (0..points).map(|k| top * (step * k as f64).exp()).collect()
}

/// Whether one penalty is chosen per equation or one shared by all equations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltySharing {
    #[default]
    PerEquation,
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoConfig {
    pub lambda_grid: LambdaGrid,
    /// Exponent τ in the adaptive weights `g_i = |β̇_i|^{-τ}`.
    pub adaptive_exponent: f64,
    pub max_iter: usize,
    /// Convergence threshold on the largest coordinate update in a sweep.
    pub tol: f64,
    pub sharing: PenaltySharing,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            lambda_grid: LambdaGrid::default(),
            adaptive_exponent: 1.0,
            max_iter: 10_000,
            tol: 1e-7,
            sharing: PenaltySharing::PerEquation,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<()> {
        self.lambda_grid.validate()?;
        if !(self.adaptive_exponent > 0.0 && self.adaptive_exponent.is_finite()) {
            return Err(Error::InvalidParameter(
                "adaptive_exponent must be positive".into(),
            ));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "tol must be > 0 and max_iter >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One penalized regression `y ~ Z`, with the Gram matrix cached.
#[derive(Debug, Clone)]
pub struct LassoProblem<'a> {
    z: &'a DMatrix<f64>,
    y: DVector<f64>,
    /// `(2/n) ZᵀZ`
    gram: Cow<'a, DMatrix<f64>>,
    /// `(2/n) Zᵀy`
    corr: DVector<f64>,
}

/// `(2/n) ZᵀZ`, shareable across regressions on the same design.
pub fn scaled_gram(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows().max(1) as f64;
    z.tr_mul(z) * (2.0 / n)
}

impl<'a> LassoProblem<'a> {
    pub fn new(z: &'a DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let gram = scaled_gram(z);
        Self::build(z, Cow::Owned(gram), y)
    }

    pub fn with_gram(z: &'a DMatrix<f64>, gram: &'a DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        Self::build(z, Cow::Borrowed(gram), y)
    }

    fn build(z: &'a DMatrix<f64>, gram: Cow<'a, DMatrix<f64>>, y: DVector<f64>) -> Result<Self> {
        if y.len() != z.nrows() {
            return Err(Error::Dimension {
                context: "lasso response",
                expected: z.nrows(),
                actual: y.len(),
            });
        }
        if z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lasso data"));
        }
        let n = z.nrows().max(1) as f64;
        let corr = z.tr_mul(&y) * (2.0 / n);
        Ok(LassoProblem { z, y, gram, corr })
    }

    pub fn n_obs(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_coef(&self) -> usize {
        self.z.ncols()
    }

    /// Smallest λ at which the all-zero vector solves the problem.
    pub fn lambda_max(&self, weights: &[f64]) -> f64 {
        self.corr
            .iter()
            .zip(weights)
            .filter(|(_, g)| g.is_finite() && **g > 0.0)
            .map(|(c, g)| c.abs() / g)
            .fold(0.0, f64::max)
    }

    pub fn rss(&self, beta: &DVector<f64>) -> f64 {
        (&self.y - self.z * beta).norm_squared()
    }

    pub fn objective(&self, beta: &DVector<f64>, lambda: f64, weights: &[f64]) -> f64 {
        let penalty: f64 = beta
            .iter()
            .zip(weights)
            .filter(|(b, _)| **b != 0.0)
            .map(|(b, g)| (b * g).abs())
            .sum();
        self.rss(beta) / self.n_obs() as f64 + lambda * penalty
    }

    /// Largest violation of the optimality conditions at `beta`.
    pub fn kkt_violation(&self, beta: &DVector<f64>, lambda: f64, weights: &[f64]) -> f64 {
        let n = self.n_obs() as f64;
        let neg_grad = self.z.tr_mul(&(&self.y - self.z * beta)) * (2.0 / n);
        let mut worst: f64 = 0.0;
        for i in 0..beta.len() {
            let g = weights[i];
            if !g.is_finite() {
                if beta[i] != 0.0 {
                    return f64::INFINITY;
                }
                continue;
            }
            let bound = lambda * g;
            let v = if beta[i] != 0.0 {
                (neg_grad[i] - bound * beta[i].signum()).abs()
            } else {
                (neg_grad[i].abs() - bound).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    fn check_weights(&self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.n_coef() {
            return Err(Error::Dimension {
                context: "lasso weights",
                expected: self.n_coef(),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|g| g.is_nan() || *g <= 0.0) {
            return Err(Error::InvalidParameter(
                "lasso weights must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Result of a bounded run of coordinate descent.
#[derive(Debug, Clone)]
pub struct CdOutcome {
    pub beta: DVector<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Run at most `max_sweeps` cyclic sweeps starting from `start`.
pub fn coordinate_descent(
    problem: &LassoProblem<'_>,
    weights: &[f64],
    lambda: f64,
    start: &DVector<f64>,
    max_sweeps: usize,
    tol: f64,
) -> CdOutcome {
    let p = problem.n_coef();
    let gram = problem.gram.as_ref();
    let mut beta = start.clone();
    for i in 0..p {
        if !weights[i].is_finite() || gram[(i, i)] <= 0.0 {
            beta[i] = 0.0;
        }
    }
    // residual correlation q = c − Gβ
    let mut q = &problem.corr - gram * &beta;
    for sweep in 1..=max_sweeps {
        let mut max_step: f64 = 0.0;
        for i in 0..p {
            let gii = gram[(i, i)];
            if !weights[i].is_finite() || gii <= 0.0 {
                continue;
            }
            let old = beta[i];
            let rho = q[i] + gii * old;
            let new = soft_threshold(rho, lambda * weights[i]) / gii;
            let delta = new - old;
            if delta != 0.0 {
                beta[i] = new;
                q.axpy(-delta, &gram.column(i), 1.0);
                max_step = max_step.max(delta.abs());
            }
        }
        if max_step < tol {
            return CdOutcome {
                beta,
                sweeps: sweep,
                converged: true,
            };
        }
    }
    CdOutcome {
        beta,
        sweeps: max_sweeps,
        converged: false,
    }
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn solve_one(
    problem: &LassoProblem<'_>,
    weights: &[f64],
    lambda: f64,
    start: &DVector<f64>,
    cfg: &LassoConfig,
) -> Result<DVector<f64>> {
    let out = coordinate_descent(problem, weights, lambda, start, cfg.max_iter, cfg.tol);
    if out.converged {
        Ok(out.beta)
    } else {
        Err(Error::LassoNonConvergence {
            lambda,
            kkt_violation: problem.kkt_violation(&out.beta, lambda, weights),
        })
    }
}

/// Solutions along `grid`, warm-started from the previous penalty.
pub fn lasso_path(
    problem: &LassoProblem<'_>,
    weights: &[f64],
    grid: &[f64],
    cfg: &LassoConfig,
) -> Result<Vec<DVector<f64>>> {
    problem.check_weights(weights)?;
    let mut beta = DVector::zeros(problem.n_coef());
    let mut path = Vec::with_capacity(grid.len());
    for &lambda in grid {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "negative penalty {lambda}"
            )));
        }
        beta = solve_one(problem, weights, lambda, &beta, cfg)?;
        path.push(beta.clone());
    }
    Ok(path)
}

pub fn bic(rss: f64, n: usize, df: usize) -> f64 {
    let n = n as f64;
    (rss / n).ln() + df as f64 * n.ln() / n
}

fn nonzeros(beta: &DVector<f64>) -> usize {
    beta.iter().filter(|b| **b != 0.0).count()
}

/// A penalized fit chosen by BIC.
#[derive(Debug, Clone)]
pub struct Selected {
    pub lambda: f64,
    pub beta: DVector<f64>,
    pub bic: f64,
}

/// BIC over a solved path; ties go to the earlier (larger) penalty.
pub fn bic_scores(problem: &LassoProblem<'_>, path: &[DVector<f64>]) -> Vec<f64> {
    path.iter()
        .map(|b| bic(problem.rss(b), problem.n_obs(), nonzeros(b)))
        .collect()
}

pub(crate) fn argmin_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, s) in scores.iter().enumerate().skip(1) {
        // NaN never wins; −∞ (a perfect fit) does
        if *s < scores[best] || scores[best].is_nan() && !s.is_nan() {
            best = k;
        }
    }
    best
}

/// Fit along `grid` and return the BIC-minimizing solution.
pub fn bic_select(
    problem: &LassoProblem<'_>,
    weights: &[f64],
    grid: &[f64],
    cfg: &LassoConfig,
) -> Result<Selected> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("lambda grid is empty".into()));
    }
    let path = lasso_path(problem, weights, grid, cfg)?;
    let scores = bic_scores(problem, &path);
    let k = argmin_first(&scores);
    Ok(Selected {
        lambda: grid[k],
        beta: path[k].clone(),
        bic: scores[k],
    })
}

/// Adaptive weights `|β̇|^{-τ}`, infinite where the initial estimate is zero.
pub fn adaptive_weights(initial: &DVector<f64>, tau: f64) -> Vec<f64> {
    initial
        .iter()
        .map(|b| {
            if *b == 0.0 {
                f64::INFINITY
            } else {
                b.abs().powf(-tau)
            }
        })
        .collect()
}
