//! Sparse precision matrix estimation by the graphical lasso.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    ensure_finite, matrix_serde, min_eigenvalue, sample_covariance, spd_inverse, symmetrize,
};
use crate::sparsevar::lasso::{argmin_first, log_grid, soft_threshold};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlassoConfig {
    /// Stop once the duality gap is below this.
    pub gap_tol: f64,
    /// ... and no entry of the working covariance moved by more than this
    /// (relative to the mean diagonal) over the last sweep.
    pub change_tol: f64,
    pub max_sweeps: usize,
}

impl Default for GlassoConfig {
    fn default() -> Self {
        GlassoConfig {
            gap_tol: 1e-6,
            change_tol: 1e-10,
            max_sweeps: 10_000,
        }
    }
}

impl GlassoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0) || !(self.change_tol > 0.0) || self.max_sweeps == 0 {
            return Err(Error::InvalidParameter(
                "glasso tolerances must be > 0 and max_sweeps >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedPrecision {
    #[serde(with = "matrix_serde")]
    pub precision: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub covariance: DMatrix<f64>,
    pub penalty: f64,
}

impl RegularizedPrecision {
    /// Off-diagonal nonzeros, counting both triangles.
    pub fn offdiag_nonzeros(&self) -> usize {
        let n = self.precision.nrows();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.precision[(i, j)] != 0.0)
            .count()
    }
}

fn check_input(s: &DMatrix<f64>) -> Result<()> {
    ensure_finite(s, "sample covariance")?;
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::Dimension {
            context: "sample covariance",
            expected: n,
            actual: s.ncols(),
        });
    }
    let scale = s.amax().max(f64::MIN_POSITIVE);
    if (s - s.transpose()).amax() > 1e-10 * scale {
        return Err(Error::InvalidParameter(
            "sample covariance is not symmetric".into(),
        ));
    }
    if (0..n).any(|i| s[(i, i)] <= 0.0) || min_eigenvalue(s) < -1e-10 * scale {
        return Err(Error::NotPsd("sample covariance"));
    }
    Ok(())
}

/// Maximize `log det Θ − tr(SΘ) − ρ Σ_{i≠j} |Θ_ij|` by block coordinate descent
/// on the working covariance `W = Θ⁻¹`, one column lasso at a time.
pub fn graphical_lasso(
    s: &DMatrix<f64>,
    rho: f64,
    cfg: &GlassoConfig,
) -> Result<RegularizedPrecision> {
    cfg.validate()?;
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "glasso penalty must be >= 0, got {rho}"
        )));
    }
    check_input(s)?;
    let n = s.nrows();
    let mut s = s.clone();
    symmetrize(&mut s);
    let scale = s.diagonal().mean();

    let mut w = feasible_start(&s, rho)?;
    // column j of `beta` holds the lasso coefficients for variable j
    let mut beta = DMatrix::<f64>::zeros(n, n);
    let mut gap = f64::INFINITY;

    for _ in 0..cfg.max_sweeps {
        let mut max_change: f64 = 0.0;
        for j in 0..n {
            let mut b: DVector<f64> = beta.column(j).into_owned();
            let q = column_lasso(&w, &s, j, rho, &mut b, cfg.change_tol * scale * 1e-2);
            for i in 0..n {
                if i == j {
                    continue;
                }
                let wij = q[i];
                max_change = max_change.max((wij - w[(i, j)]).abs());
                w[(i, j)] = wij;
                w[(j, i)] = wij;
            }
            beta.set_column(j, &b);
        }
        gap = match spd_inverse(&w, "glasso working covariance") {
            Ok(theta) => duality_gap(&s, &theta, rho),
            Err(_) => f64::INFINITY,
        };
        if gap < cfg.gap_tol && max_change <= cfg.change_tol * scale {
            return finish(&w, &beta, rho);
        }
    }
    Err(Error::GlassoNonConvergence { rho, gap })
}

/// A positive definite `W` with `W_ii = S_ii` and `|W_ij − S_ij| ≤ ρ`. Block
/// updates only stay positive definite from such a point; `diag(S)` is not
/// one once some `|S_ij| > ρ`.
fn feasible_start(s: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    if s.clone().cholesky().is_some() {
        return Ok(s.clone());
    }
    let n = s.nrows();
    let max_off = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| s[(i, j)].abs())
        .fold(0.0, f64::max);
    if rho == 0.0 && max_off > 0.0 {
        return Err(Error::Singular("sample covariance at zero glasso penalty"));
    }
    // (1 − α) S + α diag(S) is definite for α > 0 and moves each off-diagonal
    // entry by α |S_ij| ≤ ρ
    let alpha = if max_off > 0.0 {
        (rho / max_off).min(1.0)
    } else {
        1.0
    };
    let mut w = s * (1.0 - alpha);
    for i in 0..n {
        w[(i, i)] = s[(i, i)];
    }
    Ok(w)
}

/// Coordinate descent for `min ½βᵀW₁₁β − s₁₂ᵀβ + ρ‖β‖₁`, skipping index `j`.
/// Returns `W₁₁β`, the updated off-diagonal column of `W`.
fn column_lasso(
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
    j: usize,
    rho: f64,
    b: &mut DVector<f64>,
    tol: f64,
) -> DVector<f64> {
    let n = w.nrows();
    b[j] = 0.0;
    let mut q: DVector<f64> = w * &*b;
    for _ in 0..100_000 {
        let mut max_step: f64 = 0.0;
        for k in 0..n {
            if k == j {
                continue;
            }
            let partial = q[k] - w[(k, k)] * b[k];
            let new = soft_threshold(s[(k, j)] - partial, rho) / w[(k, k)];
            let delta = new - b[k];
            if delta != 0.0 {
                b[k] = new;
                q.axpy(delta, &w.column(k), 1.0);
                max_step = max_step.max(delta.abs());
            }
        }
        if max_step < tol {
            break;
        }
    }
    q
}

/// `tr(SΘ) + ρ‖Θ‖₁,off − N`, the gap between the primal value at Θ and the dual
/// value at `W = Θ⁻¹`.
pub fn duality_gap(s: &DMatrix<f64>, theta: &DMatrix<f64>, rho: f64) -> f64 {
    let n = s.nrows();
    let trace = s.component_mul(theta).sum();
    let off: f64 = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j)
        .map(|(i, j)| theta[(i, j)].abs())
        .sum();
    trace + rho * off - n as f64
}

fn finish(w: &DMatrix<f64>, beta: &DMatrix<f64>, rho: f64) -> Result<RegularizedPrecision> {
    let n = w.nrows();
    // Θ from the column lassos keeps their exact zeros
    let mut theta = DMatrix::zeros(n, n);
    for j in 0..n {
        let fitted: f64 = (0..n)
            .filter(|&k| k != j)
            .map(|k| w[(k, j)] * beta[(k, j)])
            .sum();
        let tjj = 1.0 / (w[(j, j)] - fitted);
        theta[(j, j)] = tjj;
        for k in 0..n {
            if k != j {
                theta[(k, j)] = -beta[(k, j)] * tjj;
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let v = if theta[(i, j)] == 0.0 || theta[(j, i)] == 0.0 {
                0.0
            } else {
                0.5 * (theta[(i, j)] + theta[(j, i)])
            };
            theta[(i, j)] = v;
            theta[(j, i)] = v;
        }
    }
    let covariance = spd_inverse(&theta, "glasso precision")?;
    Ok(RegularizedPrecision {
        precision: theta,
        covariance,
        penalty: rho,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RhoGrid {
    /// Log-spaced from the largest off-diagonal `|S_ij|` down to `min_ratio` times it.
    Auto {
        points: usize,
        min_ratio: f64,
    },
    Fixed {
        values: Vec<f64>,
    },
}

impl Default for RhoGrid {
    fn default() -> Self {
        RhoGrid::Auto {
            points: 10,
            min_ratio: 0.01,
        }
    }
}

impl RhoGrid {
    pub fn validate(&self) -> Result<()> {
        match self {
            RhoGrid::Auto { points, min_ratio } => {
                if *points == 0 || !(*min_ratio > 0.0 && *min_ratio <= 1.0) {
                    return Err(Error::InvalidParameter(
                        "rho grid needs points >= 1 and 0 < min_ratio <= 1".into(),
                    ));
                }
            }
            RhoGrid::Fixed { values } => {
                if values.is_empty() || values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidParameter(
                        "fixed rho grid must be nonempty and nonnegative".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Grid values in descending order.
    pub fn resolve(&self, s: &DMatrix<f64>) -> Vec<f64> {
        let mut values = match self {
            RhoGrid::Auto { points, min_ratio } => {
                let n = s.nrows();
                let top = (0..n)
                    .flat_map(|i| (0..n).map(move |j| (i, j)))
                    .filter(|&(i, j)| i != j)
                    .map(|(i, j)| s[(i, j)].abs())
                    .fold(0.0, f64::max);
                if top > 0.0 {
                    log_grid(top, *min_ratio, *points)
                } else {
                    vec![0.0]
                }
            }
            RhoGrid::Fixed { values } => values.clone(),
        };
        values.sort_by(|a, b| b.total_cmp(a));
        values.dedup();
        values
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlassoSelection {
    pub rho: f64,
    pub precision: RegularizedPrecision,
    pub bic: f64,
    /// `(ρ, BIC, off-diagonal nonzeros)` over the grid, ρ descending.
    pub path: Vec<(f64, f64, usize)>,
    /// Whether sparsity was nonincreasing as ρ fell along the grid.
    pub monotone: bool,
}

/// Gaussian BIC `−log det Θ + tr(SΘ) + (nnz_off / 2) log n / n`.
pub fn glasso_bic(s: &DMatrix<f64>, prec: &RegularizedPrecision, n_obs: usize) -> f64 {
    let n = n_obs as f64;
    let logdet = match prec.precision.clone().cholesky() {
        Some(c) => 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        None => return f64::NAN,
    };
    -logdet
        + s.component_mul(&prec.precision).sum()
        + prec.offdiag_nonzeros() as f64 / 2.0 * n.ln() / n
}

/// Fit the graphical lasso over `grid` on the covariance of `residuals` and keep
/// the BIC minimizer; ties go to the larger penalty.
pub fn select_glasso_penalty(
    residuals: &DMatrix<f64>,
    grid: &RhoGrid,
    cfg: &GlassoConfig,
) -> Result<GlassoSelection> {
    grid.validate()?;
    let n_obs = residuals.nrows();
    if n_obs < 2 {
        return Err(Error::InvalidParameter(
            "need at least two residual rows".into(),
        ));
    }
    let s = sample_covariance(residuals);
    let rhos = grid.resolve(&s);
    let fits: Vec<RegularizedPrecision> = rhos
        .par_iter()
        .map(|&rho| graphical_lasso(&s, rho, cfg))
        .collect::<Result<_>>()?;
    let path: Vec<(f64, f64, usize)> = rhos
        .iter()
        .zip(&fits)
        .map(|(&rho, fit)| (rho, glasso_bic(&s, fit, n_obs), fit.offdiag_nonzeros()))
        .collect();
    let monotone = path.windows(2).all(|w| w[1].2 >= w[0].2);
    if !monotone {
        warn!("graphical lasso sparsity is not monotone along the penalty grid");
    }
    let scores: Vec<f64> = path.iter().map(|p| p.1).collect();
    let k = argmin_first(&scores);
    Ok(GlassoSelection {
        rho: rhos[k],
        bic: scores[k],
        precision: fits.into_iter().nth(k).expect("index from grid"),
        path,
        monotone,
    })
}
