//! Frequency-domain connectedness.
//!
//! Spectra follow `f(ω) = Σ_h Γ(h) e^{−ihω}` with `Γ(h) = E[x_t x_{t−h}ᵀ]`, so
//! `(2π)⁻¹ ∫_{−π}^{π} f(ω) dω = Γ(0)`. The one exception is
//! [`factor_spectrum_kernel`], which returns the `(2π)⁻¹`-scaled estimate and
//! must be multiplied by `2π` (see [`scale_spectrum`]) before it is combined
//! with the idiosyncratic spectrum.
//!
//! All spectral objects are evaluated on a [`FrequencyGrid`] over `(0, π]`;
//! integrals over `(−π, π)` use the symmetry `f(−ω) = conj f(ω)` and are twice
//! the weighted grid sum.

pub mod aggregation;
pub mod grid;
pub mod kernel;

use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connectedness::JointMaRepresentation;
use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, matrix_serde};

pub use aggregation::{BandAggregation, BandMeasures};
pub use grid::{
    assign_bands, default_bands, full_band, validate_partition, FrequencyBand, FrequencyGrid,
};
pub use kernel::{Bandwidth, LagWindow};

pub type CMatrix = DMatrix<Complex64>;

/// Ridge added to a spectral density matrix whose inversion fails.
pub const INVERSION_RIDGE: f64 = 1e-10;

/// Frequencies per parallel work item. Partial sums are combined in a fixed
/// order so results do not depend on the thread count.
const CHUNK: usize = 16;

fn complexify(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

fn hermitian_part(m: CMatrix) -> CMatrix {
    (&m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Inverse of a Hermitian positive definite matrix. If the Cholesky
/// factorization fails, `INVERSION_RIDGE·I` is added once before giving up.
pub fn hermitian_inverse(m: &CMatrix, context: &'static str) -> Result<CMatrix> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(hermitian_part(c.inverse()));
    }
    warn!("{context}: near-singular spectral matrix, adding {INVERSION_RIDGE:e} to the diagonal");
    let n = m.nrows();
    let ridged = m + CMatrix::identity(n, n) * Complex64::new(INVERSION_RIDGE, 0.0);
    ridged
        .cholesky()
        .map(|c| hermitian_part(c.inverse()))
        .ok_or(Error::Singular(context))
}

pub fn scale_spectrum(spectrum: &mut [CMatrix], factor: f64) {
    for m in spectrum {
        *m *= Complex64::new(factor, 0.0);
    }
}

/// Lag-window estimate `(2π)⁻¹ Σ_{|h|<B} K(h/B) Γ̂(h) e^{−ihω}` of the factor
/// spectrum from a `T × r` factor matrix, with `Γ̂(h) = T⁻¹ Σ_t f_{t+h} f_tᵀ`.
pub fn factor_spectrum_kernel(
    factors: &DMatrix<f64>,
    window: &dyn LagWindow,
    bandwidth: usize,
    grid: &FrequencyGrid,
) -> Result<Vec<CMatrix>> {
    let t = factors.nrows();
    if bandwidth == 0 || bandwidth >= t {
        return Err(Error::InvalidParameter(format!(
            "bandwidth must satisfy 1 <= B_T < T = {t}, got {bandwidth}"
        )));
    }
    ensure_finite(factors, "factor series")?;
    let lags: Vec<(usize, DMatrix<f64>)> = (0..bandwidth)
        .filter_map(|h| {
            let k = window.weight(h as f64 / bandwidth as f64);
            if h > 0 && k == 0.0 {
                return None;
            }
            let g = factors.rows(h, t - h).transpose() * factors.rows(0, t - h) / t as f64;
            Some((h, g * k))
        })
        .collect();
    let out = grid
        .points()
        .par_iter()
        .map(|&w| {
            let mut s = complexify(&lags[0].1);
            for (h, g) in &lags[1..] {
                let e = Complex64::from_polar(1.0, -(*h as f64) * w);
                s += complexify(g) * e + complexify(&g.transpose()) * e.conj();
            }
            hermitian_part(s) / Complex64::new(2.0 * PI, 0.0)
        })
        .collect();
    Ok(out)
}

/// `I − Σ_h B_h e^{ihω}`.
fn lag_polynomial(coeffs: &[DMatrix<f64>], n: usize, omega: f64) -> CMatrix {
    let mut m = CMatrix::identity(n, n);
    for (j, b) in coeffs.iter().enumerate() {
        let e = Complex64::from_polar(1.0, (j + 1) as f64 * omega);
        m -= complexify(b) * e;
    }
    m
}

fn check_var(coeffs: &[DMatrix<f64>], precision: &DMatrix<f64>) -> Result<usize> {
    let n = precision.nrows();
    if precision.ncols() != n {
        return Err(Error::Dimension {
            context: "idiosyncratic precision",
            expected: n,
            actual: precision.ncols(),
        });
    }
    for b in coeffs {
        if b.shape() != (n, n) {
            return Err(Error::Dimension {
                context: "idiosyncratic VAR coefficients",
                expected: n,
                actual: b.nrows(),
            });
        }
    }
    Ok(n)
}

/// Inverse idiosyncratic spectrum of a VAR with coefficients `B_h` and
/// innovation precision `Σ⁻¹` at one frequency:
/// `(I − Σ_h B_h e^{ihω})ᵀ Σ⁻¹ (I − Σ_h B_h e^{−ihω})`.
pub fn idio_inverse_spectrum_at(
    coeffs: &[DMatrix<f64>],
    precision: &DMatrix<f64>,
    omega: f64,
) -> Result<CMatrix> {
    let n = check_var(coeffs, precision)?;
    let m = lag_polynomial(coeffs, n, omega);
    Ok(hermitian_part(
        m.transpose() * complexify(precision) * m.conjugate(),
    ))
}

pub fn idio_inverse_spectrum(
    coeffs: &[DMatrix<f64>],
    precision: &DMatrix<f64>,
    grid: &FrequencyGrid,
) -> Result<Vec<CMatrix>> {
    check_var(coeffs, precision)?;
    grid.points()
        .par_iter()
        .map(|&w| idio_inverse_spectrum_at(coeffs, precision, w))
        .collect()
}

/// The idiosyncratic spectrum, by inverting [`idio_inverse_spectrum_at`].
pub fn idio_spectrum(
    coeffs: &[DMatrix<f64>],
    precision: &DMatrix<f64>,
    grid: &FrequencyGrid,
) -> Result<Vec<CMatrix>> {
    check_var(coeffs, precision)?;
    grid.points()
        .par_iter()
        .map(|&w| {
            hermitian_inverse(
                &idio_inverse_spectrum_at(coeffs, precision, w)?,
                "idiosyncratic spectrum",
            )
        })
        .collect()
}

fn check_panel_inputs(
    loadings: &DMatrix<f64>,
    factor_spec: &[CMatrix],
    idio_len: usize,
    grid_len: usize,
) -> Result<()> {
    if factor_spec.len() != grid_len || idio_len != grid_len {
        return Err(Error::Quadrature(format!(
            "spectra evaluated on {} and {} frequencies, grid has {grid_len}",
            factor_spec.len(),
            idio_len
        )));
    }
    let r = loadings.ncols();
    if let Some(f) = factor_spec.iter().find(|f| f.shape() != (r, r)) {
        return Err(Error::Dimension {
            context: "factor spectrum",
            expected: r,
            actual: f.nrows(),
        });
    }
    Ok(())
}

/// `Λ f_f(ω) Λᵀ + f_ξ(ω)` at every frequency.
pub fn panel_spectrum(
    loadings: &DMatrix<f64>,
    factor_spec: &[CMatrix],
    idio_spec: &[CMatrix],
) -> Result<Vec<CMatrix>> {
    check_panel_inputs(loadings, factor_spec, idio_spec.len(), factor_spec.len())?;
    let n = loadings.nrows();
    let l = complexify(loadings);
    factor_spec
        .par_iter()
        .zip(idio_spec)
        .map(|(f, xi)| {
            if xi.shape() != (n, n) {
                return Err(Error::Dimension {
                    context: "idiosyncratic spectrum",
                    expected: n,
                    actual: xi.nrows(),
                });
            }
            Ok(hermitian_part(&l * f * l.transpose() + xi))
        })
        .collect()
}

/// The diagonal of the panel spectrum, `(f_x(ω))_kk`, computing the
/// idiosyncratic spectrum one frequency at a time.
pub fn panel_power(
    loadings: &DMatrix<f64>,
    factor_spec: &[CMatrix],
    idio_coeffs: &[DMatrix<f64>],
    idio_precision: &DMatrix<f64>,
    grid: &FrequencyGrid,
) -> Result<Vec<DVector<f64>>> {
    check_panel_inputs(loadings, factor_spec, grid.len(), grid.len())?;
    let n = check_var(idio_coeffs, idio_precision)?;
    if n != loadings.nrows() {
        return Err(Error::Dimension {
            context: "idiosyncratic VAR",
            expected: loadings.nrows(),
            actual: n,
        });
    }
    let l = complexify(loadings);
    grid.points()
        .par_iter()
        .zip(factor_spec)
        .map(|(&w, f)| {
            let xi = hermitian_inverse(
                &idio_inverse_spectrum_at(idio_coeffs, idio_precision, w)?,
                "idiosyncratic spectrum",
            )?;
            let lf = &l * f;
            Ok(DVector::from_fn(n, |k, _| {
                (lf.row(k).dot(&l.row(k).conjugate()) + xi[(k, k)]).re
            }))
        })
        .collect()
}

/// `Σ_h (ΛΨ_f⁽ʰ⁾ | Ψ_ξ⁽ʰ⁾) e^{−ihω}` over the terms of `rep`, `N × (r+N)`.
pub fn transfer_at(rep: &JointMaRepresentation, omega: f64) -> CMatrix {
    let (n, r) = (rep.n_series(), rep.n_factors());
    let mut pf = CMatrix::zeros(r, r);
    let mut px = CMatrix::zeros(n, n);
    for h in 0..rep.horizon() {
        let e = Complex64::from_polar(1.0, -(h as f64) * omega);
        for (acc, &v) in pf.iter_mut().zip(rep.psi_f[h].iter()) {
            *acc += e * v;
        }
        for (acc, &v) in px.iter_mut().zip(rep.psi_xi[h].iter()) {
            *acc += e * v;
        }
    }
    let mut t = CMatrix::zeros(n, r + n);
    t.view_mut((0, 0), (n, r))
        .copy_from(&(complexify(&rep.loadings) * pf));
    t.view_mut((0, r), (n, n)).copy_from(&px);
    t
}

/// Diagonal of the spectrum implied by the truncated MA representation,
/// `T(ω) Σ_η T(ω)ᴴ`.
pub fn transfer_power(rep: &JointMaRepresentation, grid: &FrequencyGrid) -> Vec<DVector<f64>> {
    let s = complexify(&rep.sigma_eta);
    grid.points()
        .par_iter()
        .map(|&w| {
            let t = transfer_at(rep, w);
            let ts = &t * &s;
            DVector::from_fn(rep.n_series(), |k, _| {
                ts.row(k).dot(&t.row(k).conjugate()).re
            })
        })
        .collect()
}

/// Generalized causation spectrum at one frequency, `N × (r+N)`:
/// `|e_kᵀ T(ω) Σ_η e_j|² / (σ_jj (f_x(ω))_kk)`.
pub fn causation_at(
    rep: &JointMaRepresentation,
    power: &DVector<f64>,
    omega: f64,
) -> Result<DMatrix<f64>> {
    let (n, k) = (rep.n_series(), rep.n_shocks());
    if power.len() != n {
        return Err(Error::Dimension {
            context: "panel power",
            expected: n,
            actual: power.len(),
        });
    }
    for i in 0..n {
        if !(power[i] > 0.0) || !power[i].is_finite() {
            return Err(Error::ZeroSpectrum { series: i, omega });
        }
    }
    let scales: Vec<f64> = (0..k)
        .map(|j| {
            let s = rep.sigma_eta[(j, j)];
            if s > 0.0 {
                Ok(s)
            } else {
                Err(Error::DegenerateShock(j))
            }
        })
        .collect::<Result<_>>()?;
    let g = transfer_at(rep, omega) * complexify(&rep.sigma_eta);
    Ok(DMatrix::from_fn(n, k, |i, j| {
        g[(i, j)].norm_sqr() / scales[j] / power[i]
    }))
}

pub fn causation_spectrum(
    rep: &JointMaRepresentation,
    power: &[DVector<f64>],
    grid: &FrequencyGrid,
) -> Result<Vec<DMatrix<f64>>> {
    if power.len() != grid.len() {
        return Err(Error::Quadrature(format!(
            "power evaluated on {} frequencies, grid has {}",
            power.len(),
            grid.len()
        )));
    }
    grid.points()
        .par_iter()
        .zip(power)
        .map(|(&w, p)| causation_at(rep, p, w))
        .collect()
}

/// Per-band decompositions `θ_d` and their sum `θ(∞)`, all `N × (r+N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFevd {
    pub bands: Vec<FrequencyBand>,
    #[serde(with = "matrix_serde::vec")]
    pub theta: Vec<DMatrix<f64>>,
    #[serde(with = "matrix_serde")]
    pub theta_total: DMatrix<f64>,
}

/// `(2π)⁻¹ ∫_{−π}^{π} (f_x(ω))_kk dω` for each series.
pub fn power_normalizer(power: &[DVector<f64>], grid: &FrequencyGrid) -> Result<DVector<f64>> {
    grid.check()?;
    let n = power.first().map_or(0, |p| p.len());
    let mut c = DVector::zeros(n);
    for (p, &q) in power.iter().zip(grid.weights()) {
        c.axpy(q / PI, p, 1.0);
    }
    for k in 0..n {
        if !(c[k] > 0.0) {
            return Err(Error::ZeroVariance(k));
        }
    }
    Ok(c)
}

/// Integrates `Γ_k(ω) f_kj(ω)` over each band, where
/// `Γ_k(ω) = (f_x(ω))_kk / ((2π)⁻¹ ∫ (f_x)_kk)`, evaluating the causation
/// spectrum one frequency at a time.
pub fn band_fevd(
    rep: &JointMaRepresentation,
    power: &[DVector<f64>],
    grid: &FrequencyGrid,
    bands: &[FrequencyBand],
) -> Result<BandFevd> {
    integrate_bands(power, grid, bands, rep.n_shocks(), |i| {
        causation_at(rep, &power[i], grid.points()[i])
    })
}

/// [`band_fevd`] for a causation spectrum that has already been evaluated.
pub fn band_fevd_from_spectrum(
    causation: &[DMatrix<f64>],
    power: &[DVector<f64>],
    grid: &FrequencyGrid,
    bands: &[FrequencyBand],
) -> Result<BandFevd> {
    if causation.len() != grid.len() {
        return Err(Error::Quadrature(format!(
            "causation spectrum has {} frequencies, grid has {}",
            causation.len(),
            grid.len()
        )));
    }
    let k = causation.first().map_or(0, |c| c.ncols());
    integrate_bands(power, grid, bands, k, |i| Ok(causation[i].clone()))
}

fn integrate_bands<F>(
    power: &[DVector<f64>],
    grid: &FrequencyGrid,
    bands: &[FrequencyBand],
    k: usize,
    causation: F,
) -> Result<BandFevd>
where
    F: Fn(usize) -> Result<DMatrix<f64>> + Sync,
{
    validate_partition(bands)?;
    if power.len() != grid.len() {
        return Err(Error::Quadrature(format!(
            "power evaluated on {} frequencies, grid has {}",
            power.len(),
            grid.len()
        )));
    }
    let membership = assign_bands(grid, bands)?;
    let c = power_normalizer(power, grid)?;
    let n = c.len();
    let zero = || vec![DMatrix::<f64>::zeros(n, k); bands.len()];
    let starts: Vec<usize> = (0..grid.len()).step_by(CHUNK).collect();
    let partials: Vec<Vec<DMatrix<f64>>> = starts
        .par_iter()
        .map(|&s| {
            let mut acc = zero();
            for i in s..(s + CHUNK).min(grid.len()) {
                let f = causation(i)?;
                let q = grid.weights()[i] / PI;
                let target = &mut acc[membership[i]];
                for row in 0..n {
                    let gamma = power[i][row] / c[row];
                    for col in 0..k {
                        target[(row, col)] += q * gamma * f[(row, col)];
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut theta = zero();
    for part in partials {
        for (t, p) in theta.iter_mut().zip(part) {
            *t += p;
        }
    }
    let mut theta_total = DMatrix::zeros(n, k);
    for t in &theta {
        theta_total += t;
    }
    Ok(BandFevd {
        bands: bands.to_vec(),
        theta,
        theta_total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandConnectedness {
    pub band: FrequencyBand,
    #[serde(flatten)]
    pub measures: BandMeasures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConnectedness {
    pub aggregation: String,
    pub bands: Vec<BandConnectedness>,
    /// Measures from `θ(∞)` itself.
    pub total: BandMeasures,
}

pub fn spectral_connectedness(
    fevd: &BandFevd,
    r: usize,
    rule: &dyn BandAggregation,
) -> Result<SpectralConnectedness> {
    let bands = fevd
        .bands
        .iter()
        .zip(&fevd.theta)
        .map(|(band, theta)| {
            Ok(BandConnectedness {
                band: band.clone(),
                measures: rule.aggregate(theta, &fevd.theta_total, r)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SpectralConnectedness {
        aggregation: rule.name().to_string(),
        bands,
        total: rule.aggregate(&fevd.theta_total, &fevd.theta_total, r)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectedness::{connectedness_table, gfevd, var_to_ma};
    use crate::linalg::sample_covariance;
    use crate::sim::{simulate_var, standard_normal_matrix, FactorModelDgp};
    use aggregation::Additive;
    use kernel::Bartlett;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    fn two_series_rep(horizon: usize) -> JointMaRepresentation {
        JointMaRepresentation::new(
            &m(2, 1, &[1.0, 0.5]),
            &[m(1, 1, &[0.6])],
            &[m(2, 2, &[0.3, 0.2, 0.0, -0.4])],
            &m(1, 1, &[1.0]),
            &m(2, 2, &[1.0, 0.3, 0.3, 2.0]),
            horizon,
        )
        .unwrap()
    }

    #[test]
    fn white_noise_factor_spectrum_is_flat() {
        let f = standard_normal_matrix(20_000, 1, 1);
        let grid = FrequencyGrid::midpoint(128).unwrap();
        let b = Bandwidth::CubeRoot.resolve(20_000).unwrap();
        let s = factor_spectrum_kernel(&f, &Bartlett, b, &grid).unwrap();
        let flat = 1.0 / (2.0 * PI);
        for v in &s {
            assert!((v[(0, 0)].re - flat).abs() / flat < 0.15);
            assert!(v[(0, 0)].im.abs() < 1e-15);
        }
    }

    #[test]
    fn ar1_factor_spectrum_matches_analytic() {
        let f = simulate_var(&[m(1, 1, &[0.5])], &m(1, 1, &[1.0]), 20_000, 2);
        let grid = FrequencyGrid::midpoint(128).unwrap();
        let b = Bandwidth::CubeRoot.resolve(20_000).unwrap();
        let s = factor_spectrum_kernel(&f, &Bartlett, b, &grid).unwrap();
        for (w, v) in grid.points().iter().zip(&s) {
            if *w < 0.1 || *w > PI - 0.1 {
                continue;
            }
            let exact = 1.0 / (2.0 * PI * (1.25 - w.cos()));
            assert!((v[(0, 0)].re - exact).abs() / exact < 0.10, "omega={w}");
        }
    }

    #[test]
    fn unit_bandwidth_keeps_only_lag_zero() {
        let f = standard_normal_matrix(50, 2, 3);
        let grid = FrequencyGrid::midpoint(4).unwrap();
        let s = factor_spectrum_kernel(&f, &Bartlett, 1, &grid).unwrap();
        let g0 = f.transpose() * &f / 50.0 / (2.0 * PI);
        for v in &s {
            assert!((v.map(|c| c.re) - &g0).amax() < 1e-15);
            assert!(v.map(|c| c.im).amax() < 1e-15);
        }
        assert!(factor_spectrum_kernel(&f, &Bartlett, 50, &grid).is_err());
        assert!(factor_spectrum_kernel(&f, &Bartlett, 0, &grid).is_err());
    }

    #[test]
    fn factor_spectrum_integrates_to_sample_autocovariance() {
        let f = simulate_var(
            &[m(2, 2, &[0.5, 0.1, -0.2, 0.3])],
            &DMatrix::identity(2, 2),
            500,
            4,
        );
        let grid = FrequencyGrid::midpoint(64).unwrap();
        let mut s = factor_spectrum_kernel(&f, &Bartlett, 8, &grid).unwrap();
        scale_spectrum(&mut s, 2.0 * PI);
        let mut integral = DMatrix::<f64>::zeros(2, 2);
        for (v, q) in s.iter().zip(grid.weights()) {
            integral += v.map(|c| c.re) * (q / PI);
        }
        let g0 = f.transpose() * &f / 500.0;
        assert!((integral - g0).amax() < 1e-12);
    }

    #[test]
    fn inverse_spectrum_scalar_values() {
        let b = [m(1, 1, &[0.5])];
        let p = m(1, 1, &[1.0]);
        assert!((idio_inverse_spectrum_at(&b, &p, 0.0).unwrap()[(0, 0)].re - 0.25).abs() < 1e-15);
        assert!((idio_inverse_spectrum_at(&b, &p, PI).unwrap()[(0, 0)].re - 2.25).abs() < 1e-14);
        let none: [DMatrix<f64>; 0] = [];
        let k = idio_inverse_spectrum_at(&none, &DMatrix::identity(3, 3), 1.0).unwrap();
        assert_eq!(k, CMatrix::identity(3, 3));
    }

    #[test]
    fn inverse_spectrum_inverts_long_ma_spectrum() {
        let b = [
            m(2, 2, &[0.4, 0.3, -0.1, 0.2]),
            m(2, 2, &[0.1, 0.0, 0.2, -0.1]),
        ];
        let sigma = m(2, 2, &[1.0, 0.4, 0.4, 0.5]);
        let prec = sigma.clone().try_inverse().unwrap();
        let psi = var_to_ma(&b, 2, 500);
        let cs = complexify(&sigma);
        for w in [0.05, 0.7, 1.9, 3.0] {
            let mut a = CMatrix::zeros(2, 2);
            for (h, p) in psi.iter().enumerate() {
                a += complexify(p) * Complex64::from_polar(1.0, -(h as f64) * w);
            }
            // Ψ(e^{−iω}) Σ Ψ(e^{iω})ᵀ
            let f = &a * &cs * a.conjugate().transpose();
            let k = idio_inverse_spectrum_at(&b, &prec, w).unwrap();
            let err = (k * &f - CMatrix::identity(2, 2)).map(|c| c.norm()).amax();
            assert!(err < 1e-6, "omega={w}: {err}");
        }
    }

    #[test]
    fn spectra_are_hermitian_psd() {
        let b = [m(3, 3, &[0.4, 0.3, 0.0, -0.1, 0.2, 0.1, 0.0, 0.2, 0.3])];
        let prec = m(3, 3, &[2.0, -0.5, 0.0, -0.5, 1.0, 0.2, 0.0, 0.2, 1.5]);
        let grid = FrequencyGrid::midpoint(32).unwrap();
        let xi = idio_spectrum(&b, &prec, &grid).unwrap();
        let lf = vec![CMatrix::identity(1, 1); grid.len()];
        let fx = panel_spectrum(&m(3, 1, &[1.0, -0.5, 0.2]), &lf, &xi).unwrap();
        for s in xi.iter().chain(&fx) {
            assert!((s - s.adjoint()).map(|c| c.norm()).amax() < 1e-14);
            assert!(s.clone().cholesky().is_some());
        }
    }

    #[test]
    fn zero_loadings_leave_idio_spectrum() {
        let grid = FrequencyGrid::midpoint(8).unwrap();
        let xi = idio_spectrum(
            &[m(2, 2, &[0.5, 0.0, 0.1, 0.2])],
            &DMatrix::identity(2, 2),
            &grid,
        )
        .unwrap();
        let ff = vec![CMatrix::identity(1, 1) * Complex64::new(3.0, 0.0); grid.len()];
        let fx = panel_spectrum(&DMatrix::zeros(2, 1), &ff, &xi).unwrap();
        assert_eq!(fx, xi);
    }

    #[test]
    fn panel_power_is_panel_spectrum_diagonal() {
        let b = [m(2, 2, &[0.5, 0.0, 0.1, 0.2])];
        let prec = m(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let l = m(2, 1, &[1.0, 0.7]);
        let grid = FrequencyGrid::midpoint(16).unwrap();
        let ff: Vec<CMatrix> = grid
            .points()
            .iter()
            .map(|w| CMatrix::identity(1, 1) * Complex64::new(1.0 + w, 0.0))
            .collect();
        let xi = idio_spectrum(&b, &prec, &grid).unwrap();
        let fx = panel_spectrum(&l, &ff, &xi).unwrap();
        let p = panel_power(&l, &ff, &b, &prec, &grid).unwrap();
        for (s, d) in fx.iter().zip(&p) {
            for k in 0..2 {
                assert!((s[(k, k)].re - d[k]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn panel_spectrum_recovers_covariance() {
        let dgp = FactorModelDgp {
            loadings: m(3, 1, &[1.0, 0.5, -0.8]),
            factor_coeffs: vec![m(1, 1, &[0.5])],
            factor_cov: m(1, 1, &[1.0]),
            idio_coeffs: vec![DMatrix::from_diagonal_element(3, 3, 0.3)],
            idio_cov: m(3, 3, &[1.0, 0.2, 0.0, 0.2, 1.0, 0.0, 0.0, 0.0, 0.5]),
        };
        let t = 20_000;
        let sim = dgp
            .simulate(t, 200, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let grid = FrequencyGrid::midpoint(512).unwrap();
        let b = Bandwidth::CubeRoot.resolve(t).unwrap();
        let mut ff = factor_spectrum_kernel(&sim.factors, &Bartlett, b, &grid).unwrap();
        scale_spectrum(&mut ff, 2.0 * PI);
        let prec = dgp.idio_cov.clone().try_inverse().unwrap();
        let xi = idio_spectrum(&dgp.idio_coeffs, &prec, &grid).unwrap();
        let fx = panel_spectrum(&dgp.loadings, &ff, &xi).unwrap();
        let mut integral = DMatrix::<f64>::zeros(3, 3);
        for (v, q) in fx.iter().zip(grid.weights()) {
            integral += v.map(|c| c.re) * (q / PI);
        }
        let cov = sample_covariance(&sim.x);
        for k in 0..3 {
            assert!((integral[(k, k)] - cov[(k, k)]).abs() / cov[(k, k)] < 0.05);
        }
    }

    #[test]
    fn full_band_equals_gfevd_of_truncated_representation() {
        let rep = two_series_rep(100);
        let grid = FrequencyGrid::midpoint(512).unwrap();
        let power = transfer_power(&rep, &grid);
        let fevd = band_fevd(&rep, &power, &grid, &full_band()).unwrap();
        let time = gfevd(&rep).unwrap();
        assert!((&fevd.theta_total - &time).amax() < 1e-12);
        let spec = spectral_connectedness(&fevd, 1, &Additive).unwrap();
        let table = connectedness_table(&time, 1, 100).unwrap();
        assert!((spec.total.swc - table.swc).abs() < 1e-12);
        assert!((spec.bands[0].measures.swc_mkt - table.swc_mkt).abs() < 1e-12);
    }

    #[test]
    fn bands_add_up() {
        let rep = two_series_rep(100);
        let grid = FrequencyGrid::midpoint(512).unwrap();
        let power = transfer_power(&rep, &grid);
        let fevd = band_fevd(&rep, &power, &grid, &default_bands()).unwrap();
        let mut sum = DMatrix::zeros(2, 3);
        for t in &fevd.theta {
            sum += t;
        }
        assert!((sum - &fevd.theta_total).amax() < 1e-15);
        let spec = spectral_connectedness(&fevd, 1, &Additive).unwrap();
        let parts: f64 = spec.bands.iter().map(|b| b.measures.swc).sum();
        assert!((parts - spec.total.swc).abs() < 1e-12);
        for b in &spec.bands {
            assert!((b.measures.swc - b.measures.swc_mkt - b.measures.swc_ids).abs() < 1e-15);
        }
        // the persistent factor loads on the lowest band
        assert!(
            spec.bands[0].measures.swc_mkt / fevd.bands[0].b
                > spec.bands[2].measures.swc_mkt / (PI - fevd.bands[2].a)
        );
    }

    #[test]
    fn stored_and_streamed_spectra_agree() {
        let rep = two_series_rep(20);
        let grid = FrequencyGrid::midpoint(40).unwrap();
        let power = transfer_power(&rep, &grid);
        let spec = causation_spectrum(&rep, &power, &grid).unwrap();
        let a = band_fevd_from_spectrum(&spec, &power, &grid, &default_bands()).unwrap();
        let b = band_fevd(&rep, &power, &grid, &default_bands()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn white_noise_system_spreads_evenly() {
        let rep = JointMaRepresentation::new(
            &m(2, 1, &[1.0, 1.0]),
            &[],
            &[],
            &m(1, 1, &[1.0]),
            &DMatrix::identity(2, 2),
            1,
        )
        .unwrap();
        let grid = FrequencyGrid::midpoint(512).unwrap();
        let power = transfer_power(&rep, &grid);
        let fevd = band_fevd(&rep, &power, &grid, &default_bands()).unwrap();
        for (band, t) in fevd.bands.iter().zip(&fevd.theta) {
            let share = (band.b - band.a) / PI;
            for (v, total) in t.iter().zip(fevd.theta_total.iter()) {
                assert!((v - share * total).abs() <= total / 512.0, "{}", band.name);
            }
        }
        assert!((fevd.theta_total[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn decoupled_and_scalar_systems() {
        let rep = JointMaRepresentation::new(
            &DMatrix::zeros(2, 1),
            &[m(1, 1, &[0.5])],
            &[m(2, 2, &[0.5, 0.0, 0.0, -0.3])],
            &m(1, 1, &[1.0]),
            &DMatrix::identity(2, 2),
            100,
        )
        .unwrap();
        let grid = FrequencyGrid::midpoint(512).unwrap();
        let power = transfer_power(&rep, &grid);
        let fevd = band_fevd(&rep, &power, &grid, &default_bands()).unwrap();
        let expected = m(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((&fevd.theta_total - expected).amax() < 1e-12);
        let spec = spectral_connectedness(&fevd, 1, &Additive).unwrap();
        assert!(spec.bands.iter().all(|b| b.measures.swc.abs() < 1e-15));

        let scalar = JointMaRepresentation::new(
            &m(1, 1, &[0.0]),
            &[],
            &[m(1, 1, &[0.9])],
            &m(1, 1, &[1.0]),
            &m(1, 1, &[2.0]),
            100,
        )
        .unwrap();
        let power = transfer_power(&scalar, &grid);
        let fevd = band_fevd(&scalar, &power, &grid, &full_band()).unwrap();
        assert!((fevd.theta_total[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_power_is_rejected() {
        let rep = two_series_rep(5);
        let err = causation_at(&rep, &DVector::from_vec(vec![1.0, 0.0]), 0.5).unwrap_err();
        assert!(matches!(err, Error::ZeroSpectrum { series: 1, .. }));
    }

    #[test]
    fn singular_inverse_spectrum_is_ridged() {
        let mut k = CMatrix::identity(2, 2);
        k[(1, 1)] = Complex64::new(0.0, 0.0);
        let inv = hermitian_inverse(&k, "test").unwrap();
        assert!((inv[(1, 1)].re - 1e10).abs() / 1e10 < 1e-6);
    }
}
