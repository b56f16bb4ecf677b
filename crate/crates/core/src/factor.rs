//! Principal-components factor estimation, the factor VAR, and joint order selection.

use log::debug;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    ensure_finite, lagged_design, matrix_serde, sample_covariance, spd_solve, split_lag_blocks,
};
use crate::sparsevar::{fit_sparse_var, LassoConfig, SparseVarFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelOrder {
    pub r: usize,
    pub p_f: usize,
    pub p_xi: usize,
}

impl ModelOrder {
    pub fn new(r: usize, p_f: usize, p_xi: usize) -> Result<Self> {
        if r == 0 || p_f == 0 || p_xi == 0 {
            return Err(Error::InvalidParameter(format!(
                "model order components must be >= 1, got (r={r}, p_f={p_f}, p_xi={p_xi})"
            )));
        }
        Ok(ModelOrder { r, p_f, p_xi })
    }
}

/// Principal-components estimates for a fixed number of factors.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// `N × r`
    pub loadings: DMatrix<f64>,
    /// `T × r`, with `F̂ᵀF̂ / T = I`.
    pub factors: DMatrix<f64>,
    /// `T × N`, `X − F̂Λ̂ᵀ`.
    pub idio: DMatrix<f64>,
    /// All singular values of `X / √(NT)`, descending.
    pub singular_values: Vec<f64>,
}

/// The full singular value decomposition of `X / √(NT)`, sorted, from which
/// any number of principal components can be read off.
pub struct PanelSvd {
    x: DMatrix<f64>,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    values: Vec<f64>,
}

impl PanelSvd {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        ensure_finite(x, "panel")?;
        let (t, n) = x.shape();
        if t == 0 || n == 0 {
            return Err(Error::InvalidParameter("empty panel".into()));
        }
        let scaled = x / ((n * t) as f64).sqrt();
        let svd = scaled.svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        Ok(PanelSvd {
            x: x.clone(),
            u: DMatrix::from_fn(t, order.len(), |i, k| u[(i, order[k])]),
            v: DMatrix::from_fn(n, order.len(), |j, k| v_t[(order[k], j)]),
            values: order.iter().map(|&k| svd.singular_values[k]).collect(),
        })
    }

    pub fn max_factors(&self) -> usize {
        self.values.len()
    }

    /// Number of singular values above `max(T, N) · ε · σ₁`.
    pub fn numerical_rank(&self) -> usize {
        let top = self.values.first().copied().unwrap_or(0.0);
        let tol = self.x.nrows().max(self.x.ncols()) as f64 * f64::EPSILON * top;
        self.values.iter().filter(|&&s| s > tol).count()
    }

    pub fn components(&self, r: usize) -> Result<PcaResult> {
        let (t, n) = self.x.shape();
        if r == 0 || r > self.max_factors() {
            return Err(Error::InvalidParameter(format!(
                "number of factors must be in 1..={}, got {r}",
                self.max_factors()
            )));
        }
        let mut factors = self.u.columns(0, r) * (t as f64).sqrt();
        let mut loadings = DMatrix::from_fn(n, r, |j, k| {
            self.v[(j, k)] * self.values[k] * (n as f64).sqrt()
        });
        for k in 0..r {
            let col = loadings.column(k);
            let pivot = col
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap_or(0.0);
            if pivot < 0.0 {
                loadings.column_mut(k).neg_mut();
                factors.column_mut(k).neg_mut();
            }
        }
        let idio = &self.x - &factors * loadings.transpose();
        Ok(PcaResult {
            loadings,
            factors,
            idio,
            singular_values: self.values.clone(),
        })
    }
}

/// Factors and loadings of a demeaned `T × N` panel by principal components.
pub fn pca_factors(x: &DMatrix<f64>, r: usize) -> Result<PcaResult> {
    PanelSvd::new(x)?.components(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorVarFit {
    #[serde(with = "matrix_serde::vec")]
    pub coeffs: Vec<DMatrix<f64>>,
    #[serde(with = "matrix_serde")]
    pub residuals: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub resid_cov: DMatrix<f64>,
}

/// Least-squares VAR(p) without intercept.
pub fn fit_factor_var(factors: &DMatrix<f64>, p: usize) -> Result<FactorVarFit> {
    let (t, r) = factors.shape();
    if p == 0 {
        return Err(Error::InvalidParameter(
            "factor VAR order must be >= 1".into(),
        ));
    }
    if t <= r * p + p {
        return Err(Error::InvalidParameter(format!(
            "factor VAR({p}) with {r} factors needs more than {} observations, got {t}",
            r * p + p
        )));
    }
    let z = lagged_design(factors, p);
    let y = factors.rows(p, t - p).into_owned();
    let gram = z.transpose() * &z;
    let stacked_t = spd_solve(
        &gram,
        &(z.transpose() * &y),
        "factor VAR regressor Gram matrix",
    )?;
    let residuals = &y - &z * &stacked_t;
    Ok(FactorVarFit {
        coeffs: split_lag_blocks(&stacked_t.transpose(), r, p),
        resid_cov: sample_covariance(&residuals),
        residuals,
    })
}

/// The fitted factor part of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelFit {
    #[serde(with = "matrix_serde")]
    pub loadings: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub factors: DMatrix<f64>,
    #[serde(with = "matrix_serde::vec")]
    pub factor_var_coeffs: Vec<DMatrix<f64>>,
    #[serde(with = "matrix_serde")]
    pub factor_resid_cov: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub idio_panel: DMatrix<f64>,
}

impl FactorModelFit {
    pub fn from_parts(pca: PcaResult, var: FactorVarFit) -> Self {
        FactorModelFit {
            loadings: pca.loadings,
            factors: pca.factors,
            factor_var_coeffs: var.coeffs,
            factor_resid_cov: var.resid_cov,
            idio_panel: pca.idio,
        }
    }

    pub fn n_factors(&self) -> usize {
        self.loadings.ncols()
    }
}

pub fn fit_factor_model(x: &DMatrix<f64>, r: usize, p_f: usize) -> Result<FactorModelFit> {
    let pca = pca_factors(x, r)?;
    let var = fit_factor_var(&pca.factors, p_f)?;
    Ok(FactorModelFit::from_parts(pca, var))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderBounds {
    pub r_max: usize,
    pub pf_max: usize,
    pub pxi_max: usize,
}

impl Default for OrderBounds {
    fn default() -> Self {
        OrderBounds {
            r_max: 5,
            pf_max: 4,
            pxi_max: 6,
        }
    }
}

/// Penalty scale `C_T = ½ log(NT / (N + T)) / log T`.
pub fn penalty_scale(n: usize, t: usize) -> f64 {
    let (n, t) = (n as f64, t as f64);
    0.5 * (n * t / (n + t)).ln() / t.ln()
}

/// Per-series criterion values for one candidate fit.
///
/// The residual is `x_it − Λ̂_iᵀ Σ_j D̂_j f̂_{t−j} − e_iᵀ Σ_j B̂_j ξ̂_{t−j}`,
/// summed from row `start` on and divided by `T`. Candidates of different lag
/// orders are only comparable when they share `start`; it must be at least
/// `max(p_f, p_ξ)`.
pub fn information_criterion(
    x: &DMatrix<f64>,
    fm: &FactorModelFit,
    sv: &SparseVarFit,
    start: usize,
) -> Result<Vec<f64>> {
    let (t, n) = x.shape();
    let r = fm.n_factors();
    let p_f = fm.factor_var_coeffs.len();
    if start < p_f.max(sv.order()) || start >= t {
        return Err(Error::InvalidParameter(format!(
            "criterion sample start {start} must lie in {}..{t}",
            p_f.max(sv.order())
        )));
    }
    let mut f_pred = DMatrix::zeros(t - start, r);
    for (j, d) in fm.factor_var_coeffs.iter().enumerate() {
        f_pred += fm.factors.rows(start - j - 1, t - start) * d.transpose();
    }
    let mut pred = f_pred * fm.loadings.transpose();
    for (j, b) in sv.coeffs.iter().enumerate() {
        pred += fm.idio_panel.rows(start - j - 1, t - start) * b.transpose();
    }
    let resid = x.rows(start, t - start) - pred;
    let scale = (t as f64).ln() / t as f64 * penalty_scale(n, t);
    Ok((0..n)
        .map(|i| {
            let mse = resid.column(i).norm_squared() / t as f64;
            let params = (r * p_f + sv.row_nonzeros(i)) as f64;
            mse.ln() + params * scale
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderSelection {
    pub order: ModelOrder,
    pub criterion: f64,
    /// Averaged criterion for every candidate that could be fitted.
    pub candidates: Vec<(ModelOrder, f64)>,
}

/// Exhaustive grid search minimizing the series-averaged criterion, evaluated
/// for every candidate on the common sample `t > max(pf_max, pxi_max)`.
/// `r` never exceeds the numerical rank of the panel, since further
/// components are rounding noise. Candidates that cannot be fitted are skipped.
pub fn select_model_order(
    x: &DMatrix<f64>,
    bounds: OrderBounds,
    lasso: &LassoConfig,
) -> Result<OrderSelection> {
    if bounds.r_max == 0 || bounds.pf_max == 0 || bounds.pxi_max == 0 {
        return Err(Error::InvalidParameter(
            "order bounds must all be >= 1".into(),
        ));
    }
    let svd = PanelSvd::new(x)?;
    let r_max = bounds.r_max.min(svd.numerical_rank().max(1));
    let pcas: Vec<PcaResult> = (1..=r_max)
        .map(|r| svd.components(r))
        .collect::<Result<_>>()?;

    let pairs: Vec<(usize, usize)> = (1..=r_max)
        .flat_map(|r| (1..=bounds.pxi_max).map(move |p| (r, p)))
        .collect();
    let sparse: Vec<Option<SparseVarFit>> = pairs
        .par_iter()
        .map(
            |&(r, p)| match fit_sparse_var(&pcas[r - 1].idio, p, lasso) {
                Ok(fit) => Some(fit),
                Err(e) => {
                    debug!("skipping r={r}, p_xi={p}: {e}");
                    None
                }
            },
        )
        .collect();

    let start = bounds.pf_max.max(bounds.pxi_max);
    let mut candidates = Vec::new();
    for r in 1..=r_max {
        let pca = &pcas[r - 1];
        for p_f in 1..=bounds.pf_max {
            let var = match fit_factor_var(&pca.factors, p_f) {
                Ok(v) => v,
                Err(e) => {
                    debug!("skipping r={r}, p_f={p_f}: {e}");
                    continue;
                }
            };
            let fm = FactorModelFit::from_parts(pca.clone(), var);
            for p_xi in 1..=bounds.pxi_max {
                let Some(sv) = &sparse[(r - 1) * bounds.pxi_max + p_xi - 1] else {
                    continue;
                };
                let ic = information_criterion(x, &fm, sv, start)?;
                let avg = ic.iter().sum::<f64>() / ic.len() as f64;
                candidates.push((ModelOrder { r, p_f, p_xi }, avg));
            }
        }
    }
    // candidates are generated in lexicographic order, so the first minimum wins ties
    let scores: Vec<f64> = candidates.iter().map(|c| c.1).collect();
    if scores.is_empty() {
        return Err(Error::InvalidParameter(
            "no candidate model order could be fitted".into(),
        ));
    }
    let best = crate::sparsevar::lasso::argmin_first(&scores);
    Ok(OrderSelection {
        order: candidates[best].0,
        criterion: candidates[best].1,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::demean_columns;
    use crate::sim::{simulate_var, standard_normal_matrix, FactorModelDgp};
    use nalgebra::SymmetricEigen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_one_panel_has_zero_idio() {
        let f = standard_normal_matrix(60, 1, 1);
        let lambda = standard_normal_matrix(8, 1, 2);
        let x = &f * lambda.transpose();
        let pca = pca_factors(&x, 1).unwrap();
        assert!(pca.idio.amax() < 1e-12 * x.amax());
    }

    #[test]
    fn full_rank_reconstructs_exactly() {
        let x = standard_normal_matrix(30, 7, 3);
        let pca = pca_factors(&x, 7).unwrap();
        assert!(pca.idio.amax() < 1e-12);
        let x = standard_normal_matrix(5, 9, 4);
        assert!(pca_factors(&x, 5).unwrap().idio.amax() < 1e-12);
        assert!(pca_factors(&x, 6).is_err());
    }

    #[test]
    fn normalization_and_sign_rule() {
        let x = demean_columns(&standard_normal_matrix(100, 12, 5));
        let pca = pca_factors(&x, 3).unwrap();
        let gram = pca.factors.transpose() * &pca.factors / 100.0;
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-8);
        for col in pca.loadings.column_iter() {
            let pivot = col
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap();
            assert!(pivot > 0.0);
        }
        assert!(pca.singular_values.windows(2).all(|w| w[0] >= w[1]));
        // retained variance never falls as r grows
        let retained: Vec<f64> = (1..=12)
            .map(|r| pca.singular_values[..r].iter().map(|s| s * s).sum())
            .collect();
        assert!(retained.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn loading_space_matches_eigen_oracle() {
        let dgp = FactorModelDgp {
            loadings: standard_normal_matrix(20, 2, 6),
            factor_coeffs: vec![DMatrix::from_diagonal_element(2, 2, 0.3)],
            factor_cov: DMatrix::identity(2, 2),
            idio_coeffs: vec![],
            idio_cov: DMatrix::from_diagonal_element(20, 20, 0.01),
        };
        let sim = dgp
            .simulate(200, 50, &mut ChaCha8Rng::seed_from_u64(7))
            .unwrap();
        let x = demean_columns(&sim.x);
        let pca = pca_factors(&x, 2).unwrap();

        // independent route: top eigenvectors of XᵀX
        let eig = SymmetricEigen::new(x.transpose() * &x);
        let mut idx: Vec<usize> = (0..20).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let oracle = DMatrix::from_fn(20, 2, |i, k| eig.eigenvectors[(i, idx[k])]);

        for space in [&pca.loadings, &dgp.loadings] {
            let q = space.clone().qr().q();
            // cosines of the principal angles are the singular values of QᵀO
            let cosines = (q.transpose() * &oracle).singular_values();
            let max_angle = cosines
                .iter()
                .map(|c| c.min(1.0).acos().to_degrees())
                .fold(0.0, f64::max);
            assert!(max_angle < 5.0, "max principal angle {max_angle}");
        }
    }

    #[test]
    fn noiseless_ar_is_recovered_exactly() {
        let f = DMatrix::from_fn(50, 1, |t, _| 0.5f64.powi(t as i32));
        let fit = fit_factor_var(&f, 1).unwrap();
        assert!((fit.coeffs[0][(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn white_noise_factors_give_small_coefficients() {
        let f = standard_normal_matrix(10_000, 1, 9);
        let fit = fit_factor_var(&f, 1).unwrap();
        assert!(fit.coeffs[0].norm() < 0.05);
    }

    #[test]
    fn recovers_bivariate_var() {
        let d = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]);
        let f = simulate_var(&[d.clone()], &DMatrix::identity(2, 2), 5000, 10);
        let fit = fit_factor_var(&f, 1).unwrap();
        assert!((&fit.coeffs[0] - d).amax() < 0.05);
        // normal equations: residuals orthogonal to regressors
        let z = lagged_design(&f, 1);
        assert!((z.transpose() * &fit.residuals).amax() < 1e-8 * 5000.0);
    }

    #[test]
    fn singular_regressors_are_an_error() {
        let f = DMatrix::zeros(20, 1);
        assert!(matches!(fit_factor_var(&f, 1), Err(Error::Singular(_))));
    }

    fn small_bounds() -> OrderBounds {
        OrderBounds {
            r_max: 2,
            pf_max: 2,
            pxi_max: 2,
        }
    }

    #[test]
    fn white_noise_panel_selects_smallest_order() {
        let x = demean_columns(&standard_normal_matrix(500, 10, 12));
        let sel = select_model_order(&x, small_bounds(), &LassoConfig::default()).unwrap();
        assert_eq!(
            sel.order,
            ModelOrder {
                r: 1,
                p_f: 1,
                p_xi: 1
            }
        );
        assert_eq!(sel.candidates.len(), 8);
    }

    #[test]
    fn noiseless_rank_one_ar1_selects_one_factor_one_lag() {
        let f = simulate_var(
            &[DMatrix::from_element(1, 1, 0.7)],
            &DMatrix::identity(1, 1),
            400,
            13,
        );
        let lambda = DMatrix::from_fn(10, 1, |i, _| 1.0 + 0.1 * i as f64);
        let x = demean_columns(&(&f * lambda.transpose()));
        let sel = select_model_order(&x, small_bounds(), &LassoConfig::default()).unwrap();
        assert_eq!((sel.order.r, sel.order.p_f), (1, 1));
    }

    #[test]
    fn selection_is_permutation_invariant() {
        let dgp = FactorModelDgp {
            loadings: DMatrix::from_fn(8, 1, |i, _| 0.5 + 0.1 * i as f64),
            factor_coeffs: vec![DMatrix::from_element(1, 1, 0.6)],
            factor_cov: DMatrix::identity(1, 1),
            idio_coeffs: vec![DMatrix::from_diagonal_element(8, 8, 0.3)],
            idio_cov: DMatrix::identity(8, 8),
        };
        let x = demean_columns(
            &dgp.simulate(300, 100, &mut ChaCha8Rng::seed_from_u64(14))
                .unwrap()
                .x,
        );
        let perm = [3, 7, 0, 5, 1, 6, 2, 4];
        let xp = DMatrix::from_fn(300, 8, |t, j| x[(t, perm[j])]);
        let a = select_model_order(&x, small_bounds(), &LassoConfig::default()).unwrap();
        let b = select_model_order(&xp, small_bounds(), &LassoConfig::default()).unwrap();
        assert_eq!(a.order, b.order);
        for (ca, cb) in a.candidates.iter().zip(&b.candidates) {
            assert!((ca.1 - cb.1).abs() < 1e-5);
        }
    }

    #[test]
    fn json_roundtrip() {
        let x = demean_columns(&standard_normal_matrix(40, 4, 15));
        let fit = fit_factor_model(&x, 1, 1).unwrap();
        let back: FactorModelFit =
            serde_json::from_str(&serde_json::to_string(&fit).unwrap()).unwrap();
        assert_eq!(back, fit);
    }
}
