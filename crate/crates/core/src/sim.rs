//! Gaussian simulation of VARs and factor-augmented panels.
//!
//! Used by the parametric bootstrap to build pseudo panels and by the test
//! suites to generate data with known parameters.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matrix_serde, sampling_factor};

/// Eigenvalue floor used when a sampling covariance is not positive definite.
pub const CLIP_FLOOR: f64 = 1e-12;

pub fn standard_normal_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `n` draws from `N(0, L Lᵀ)`, one per row.
pub fn gaussian_rows<R: Rng + ?Sized>(
    factor: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let d = factor.nrows();
    let z = DMatrix::from_fn(d, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (factor * z).transpose()
}

fn checked_factor(cov: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let (l, clipped) = sampling_factor(cov, CLIP_FLOOR)?;
    if clipped {
        warn!("{what} covariance is not positive definite; eigenvalues clipped at {CLIP_FLOOR:e}");
    }
    Ok(l)
}

/// Run `y_t = Σ_j A_j y_{t-j} + e_t` from a zero state, discarding `burn_in` rows.
pub fn var_recursion(
    coeffs: &[DMatrix<f64>],
    shocks: &DMatrix<f64>,
    burn_in: usize,
) -> DMatrix<f64> {
    let (total, d) = shocks.shape();
    let mut y = DMatrix::zeros(total, d);
    for t in 0..total {
        let mut row: DVector<f64> = shocks.row(t).transpose();
        for (j, a) in coeffs.iter().enumerate() {
            if t > j {
                row.gemv(1.0, a, &y.row(t - j - 1).transpose(), 1.0);
            }
        }
        y.row_mut(t).copy_from(&row.transpose());
    }
    y.rows(burn_in, total - burn_in).into_owned()
}

/// Simulate `t` observations of a Gaussian VAR after a 200-step burn-in.
pub fn simulate_var(
    coeffs: &[DMatrix<f64>],
    cov: &DMatrix<f64>,
    t: usize,
    seed: u64,
) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = checked_factor(cov, "VAR innovation").expect("finite covariance");
    let shocks = gaussian_rows(&l, t + 200, &mut rng);
    var_recursion(coeffs, &shocks, 200)
}

/// Parameters of `x_t = Λ f_t + ξ_t` with VAR factors and VAR idiosyncratics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelDgp {
    #[serde(with = "matrix_serde")]
    pub loadings: DMatrix<f64>,
    #[serde(with = "matrix_serde::vec")]
    pub factor_coeffs: Vec<DMatrix<f64>>,
    #[serde(with = "matrix_serde")]
    pub factor_cov: DMatrix<f64>,
    #[serde(with = "matrix_serde::vec")]
    pub idio_coeffs: Vec<DMatrix<f64>>,
    #[serde(with = "matrix_serde")]
    pub idio_cov: DMatrix<f64>,
}

/// A simulated panel together with its latent components.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub x: DMatrix<f64>,
    pub factors: DMatrix<f64>,
    pub idio: DMatrix<f64>,
}

impl FactorModelDgp {
    pub fn n_series(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, r) = self.loadings.shape();
        let square = |m: &DMatrix<f64>, d: usize, ctx: &'static str| {
            if m.shape() != (d, d) {
                Err(Error::Dimension {
                    context: ctx,
                    expected: d,
                    actual: m.nrows().max(m.ncols()),
                })
            } else {
                Ok(())
            }
        };
        square(&self.factor_cov, r, "factor innovation covariance")?;
        square(&self.idio_cov, n, "idiosyncratic innovation covariance")?;
        for d in &self.factor_coeffs {
            square(d, r, "factor VAR coefficients")?;
        }
        for b in &self.idio_coeffs {
            square(b, n, "idiosyncratic VAR coefficients")?;
        }
        Ok(())
    }

    /// Draw `t` observations; innovations are Gaussian and both VARs start at zero
    /// `burn_in` steps before the first retained observation.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        t: usize,
        burn_in: usize,
        rng: &mut R,
    ) -> Result<SimulatedPanel> {
        self.validate()?;
        let lu = checked_factor(&self.factor_cov, "factor innovation")?;
        let lv = checked_factor(&self.idio_cov, "idiosyncratic innovation")?;
        let u = gaussian_rows(&lu, t + burn_in, rng);
        let v = gaussian_rows(&lv, t + burn_in, rng);
        let factors = var_recursion(&self.factor_coeffs, &u, burn_in);
        let idio = var_recursion(&self.idio_coeffs, &v, burn_in);
        let x = &factors * self.loadings.transpose() + &idio;
        Ok(SimulatedPanel { x, factors, idio })
    }
}
