//! Sparse VAR on the idiosyncratic components via equation-wise adaptive LASSO.

pub mod lasso;
pub mod threshold;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lagged_design, matrix_serde, sample_covariance, split_lag_blocks};

pub use lasso::{
    adaptive_weights, bic_select, lasso_path, LambdaGrid, LassoConfig, LassoProblem,
    PenaltySharing, Selected,
};
pub use threshold::{apply_threshold, AdaptiveThreshold, Threshold};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVarFit {
    /// `B̂⁽¹⁾ … B̂⁽ᵖ⁾`, each `N × N`.
    #[serde(with = "matrix_serde::vec")]
    pub coeffs: Vec<DMatrix<f64>>,
    /// `(T − p) × N` residuals `v̂_t`.
    #[serde(with = "matrix_serde")]
    pub residuals: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub resid_cov: DMatrix<f64>,
    /// Stage-two penalty per equation (0 for equations with no active regressor).
    pub lambdas: Vec<f64>,
}

impl SparseVarFit {
    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn n_series(&self) -> usize {
        self.resid_cov.nrows()
    }

    /// Nonzero coefficients in row `i` across all lags.
    pub fn row_nonzeros(&self, i: usize) -> usize {
        self.coeffs
            .iter()
            .map(|b| b.row(i).iter().filter(|v| **v != 0.0).count())
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Both stages of one equation's adaptive LASSO.
#[derive(Debug, Clone)]
pub struct EquationFit {
    pub initial: Selected,
    pub weights: Vec<f64>,
    pub adaptive: Selected,
}

fn zero_selection(p: usize) -> Selected {
    Selected {
        lambda: 0.0,
        beta: DVector::zeros(p),
        bic: f64::NAN,
    }
}

/// Plain LASSO by BIC, then adaptive LASSO by BIC with weights from the first stage.
pub fn fit_equation(problem: &LassoProblem<'_>, cfg: &LassoConfig) -> Result<EquationFit> {
    let p = problem.n_coef();
    let unit = vec![1.0; p];
    let lmax = problem.lambda_max(&unit);
    let initial = if lmax > 0.0 {
        bic_select(problem, &unit, &cfg.lambda_grid.resolve(lmax), cfg)?
    } else {
        zero_selection(p)
    };
    let weights = adaptive_weights(&initial.beta, cfg.adaptive_exponent);
    let lmax = problem.lambda_max(&weights);
    let adaptive = if lmax > 0.0 {
        bic_select(problem, &weights, &cfg.lambda_grid.resolve(lmax), cfg)?
    } else {
        zero_selection(p)
    };
    Ok(EquationFit {
        initial,
        weights,
        adaptive,
    })
}

/// Regressors and responses of a VAR(p) fitted to `x`.
pub struct VarDesign {
    pub z: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub gram: DMatrix<f64>,
}

impl VarDesign {
    pub fn new(x: &DMatrix<f64>, p: usize) -> Self {
        let z = lagged_design(x, p);
        let y = x.rows(p, x.nrows() - p).into_owned();
        let gram = lasso::scaled_gram(&z);
        VarDesign { z, y, gram }
    }

    pub fn problem(&self, equation: usize) -> Result<LassoProblem<'_>> {
        LassoProblem::with_gram(&self.z, &self.gram, self.y.column(equation).into_owned())
    }
}

pub fn fit_sparse_var(idio: &DMatrix<f64>, p: usize, cfg: &LassoConfig) -> Result<SparseVarFit> {
    cfg.validate()?;
    let (t, n) = idio.shape();
    if p == 0 {
        return Err(Error::InvalidParameter("VAR order must be >= 1".into()));
    }
    if t <= p + 1 {
        return Err(Error::InvalidParameter(format!(
            "need more than {} observations for a VAR({p}), got {t}",
            p + 1
        )));
    }
    let design = VarDesign::new(idio, p);
    let rows: Vec<(f64, DVector<f64>)> = match cfg.sharing {
        PenaltySharing::PerEquation => (0..n)
            .into_par_iter()
            .map(|j| {
                let fit = fit_equation(&design.problem(j)?, cfg)?;
                Ok((fit.adaptive.lambda, fit.adaptive.beta))
            })
            .collect::<Result<_>>()?,
        PenaltySharing::Shared => fit_shared(&design, n, cfg)?,
    };

    let mut stacked = DMatrix::zeros(n, n * p);
    for (j, (_, beta)) in rows.iter().enumerate() {
        stacked.row_mut(j).copy_from(&beta.transpose());
    }
    let residuals = &design.y - &design.z * stacked.transpose();
    let resid_cov = sample_covariance(&residuals);
    Ok(SparseVarFit {
        coeffs: split_lag_blocks(&stacked, n, p),
        residuals,
        resid_cov,
        lambdas: rows.into_iter().map(|(l, _)| l).collect(),
    })
}

/// One penalty for all equations, minimizing the summed BIC, at each stage.
fn fit_shared(design: &VarDesign, n: usize, cfg: &LassoConfig) -> Result<Vec<(f64, DVector<f64>)>> {
    let problems = (0..n)
        .map(|j| design.problem(j))
        .collect::<Result<Vec<_>>>()?;
    let p = design.z.ncols();

    let stage = |weights: &[Vec<f64>]| -> Result<Vec<(f64, DVector<f64>)>> {
        let lmax = problems
            .iter()
            .zip(weights)
            .map(|(pr, g)| pr.lambda_max(g))
            .fold(0.0, f64::max);
        if lmax <= 0.0 {
            return Ok(vec![(0.0, DVector::zeros(p)); n]);
        }
        let grid = cfg.lambda_grid.resolve(lmax);
        let paths = problems
            .par_iter()
            .zip(weights)
            .map(|(pr, g)| lasso_path(pr, g, &grid, cfg))
            .collect::<Result<Vec<_>>>()?;
        let totals: Vec<f64> = (0..grid.len())
            .map(|k| {
                problems
                    .iter()
                    .zip(&paths)
                    .map(|(pr, path)| lasso::bic_scores(pr, &path[k..=k])[0])
                    .sum()
            })
            .collect();
        let k = lasso::argmin_first(&totals);
        Ok(paths
            .into_iter()
            .map(|path| (grid[k], path[k].clone()))
            .collect())
    };

    let first = stage(&vec![vec![1.0; p]; n])?;
    let weights: Vec<Vec<f64>> = first
        .iter()
        .map(|(_, b)| adaptive_weights(b, cfg.adaptive_exponent))
        .collect();
    stage(&weights)
}

/// Elementwise `THR` with exponent `nu` (∞ for hard thresholding).
pub fn threshold_coeffs(fit: &SparseVarFit, lambda_xi: f64, nu: f64) -> Result<Vec<DMatrix<f64>>> {
    apply_threshold(&fit.coeffs, lambda_xi, &AdaptiveThreshold::new(nu)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_var, standard_normal_matrix};

    #[test]
    fn residuals_satisfy_var_identity() {
        let b = DMatrix::from_diagonal_element(3, 3, 0.5);
        let x = simulate_var(&[b], &DMatrix::identity(3, 3), 300, 11);
        let fit = fit_sparse_var(&x, 2, &LassoConfig::default()).unwrap();
        for t in 2..300 {
            let mut pred = x.row(t).transpose();
            for (l, bl) in fit.coeffs.iter().enumerate() {
                pred -= bl * x.row(t - l - 1).transpose();
            }
            assert!((pred - fit.residuals.row(t - 2).transpose()).amax() < 1e-12);
        }
        assert!((&fit.resid_cov - fit.resid_cov.transpose()).amax() == 0.0);
    }

    #[test]
    fn recovers_diagonal_var() {
        let n = 20;
        let b = DMatrix::from_diagonal_element(n, n, 0.5);
        let x = simulate_var(&[b], &DMatrix::identity(n, n), 2000, 3);
        let fit = fit_sparse_var(&x, 1, &LassoConfig::default()).unwrap();
        let est = &fit.coeffs[0];
        let mut false_nonzero = 0;
        for i in 0..n {
            assert!((est[(i, i)] - 0.5).abs() < 0.1, "diag {i}: {}", est[(i, i)]);
            false_nonzero += (0..n).filter(|&k| k != i && est[(i, k)] != 0.0).count();
        }
        assert!(
            (false_nonzero as f64) < 0.05 * (n * (n - 1)) as f64,
            "{false_nonzero}"
        );
    }

    #[test]
    fn white_noise_gives_mostly_zeros() {
        let x = standard_normal_matrix(2000, 20, 17);
        let fit = fit_sparse_var(&x, 1, &LassoConfig::default()).unwrap();
        let zeros = fit.coeffs[0].iter().filter(|v| **v == 0.0).count();
        assert!(zeros as f64 >= 0.95 * 400.0, "{zeros}");
    }

    #[test]
    fn scalar_case_matches_univariate_adaptive_lasso() {
        let x = simulate_var(
            &[DMatrix::from_element(1, 1, 0.6)],
            &DMatrix::identity(1, 1),
            400,
            5,
        );
        let fit = fit_sparse_var(&x, 1, &LassoConfig::default()).unwrap();
        // univariate oracle: the adaptive stage is a soft-thresholded OLS
        let y: Vec<f64> = (1..400).map(|t| x[(t, 0)]).collect();
        let z: Vec<f64> = (0..399).map(|t| x[(t, 0)]).collect();
        let n = 399.0;
        let zy: f64 = y.iter().zip(&z).map(|(a, b)| a * b).sum();
        let zz: f64 = z.iter().map(|a| a * a).sum();
        let lambda = fit.lambdas[0];
        let zm = DMatrix::from_column_slice(399, 1, &z);
        let problem = LassoProblem::new(&zm, DVector::from_vec(y)).unwrap();
        let eq = fit_equation(&problem, &LassoConfig::default()).unwrap();
        let g = eq.weights[0];
        let shrunk = lasso::soft_threshold(zy / n, lambda * g / 2.0) * n / zz;
        assert!((fit.coeffs[0][(0, 0)] - shrunk).abs() < 1e-9);
        assert!((fit.coeffs[0][(0, 0)] - 0.6).abs() < 0.1);
    }

    #[test]
    fn shared_penalty_uses_one_lambda() {
        let b = DMatrix::from_diagonal_element(4, 4, 0.4);
        let x = simulate_var(&[b], &DMatrix::identity(4, 4), 500, 9);
        let cfg = LassoConfig {
            sharing: PenaltySharing::Shared,
            ..LassoConfig::default()
        };
        let fit = fit_sparse_var(&x, 1, &cfg).unwrap();
        assert!(fit.lambdas.windows(2).all(|w| w[0] == w[1]));
        assert!((fit.coeffs[0][(0, 0)] - 0.4).abs() < 0.15);
    }

    #[test]
    fn zero_panel_gives_zero_fit() {
        let fit = fit_sparse_var(&DMatrix::zeros(50, 3), 2, &LassoConfig::default()).unwrap();
        assert!(fit.coeffs.iter().all(|b| b.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn too_short_is_an_error() {
        assert!(fit_sparse_var(&DMatrix::zeros(3, 2), 2, &LassoConfig::default()).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let x = standard_normal_matrix(100, 3, 1);
        let fit = fit_sparse_var(&x, 1, &LassoConfig::default()).unwrap();
        let back: SparseVarFit = serde_json::from_str(&fit.to_json().unwrap()).unwrap();
        assert_eq!(back, fit);
    }
}
