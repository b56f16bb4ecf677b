//! Joint moving-average representation, generalized impulse responses and
//! variance decompositions, and the time-domain connectedness measures.
//!
//! Shock indices are zero-based: `0..r` are the factor (market) shocks and
//! `r + k` is the idiosyncratic shock of series `k`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, matrix_serde};

/// MA matrices `Ψ⁽⁰⁾ … Ψ⁽ʰ⁻¹⁾` of a `d`-dimensional VAR by the recursion
/// `Ψ⁽ʰ⁾ = Σ_{j=1}^{min(h,p)} B⁽ʲ⁾ Ψ⁽ʰ⁻ʲ⁾`.
pub fn var_to_ma(coeffs: &[DMatrix<f64>], d: usize, horizon: usize) -> Vec<DMatrix<f64>> {
    let mut psi: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    for h in 0..horizon {
        if h == 0 {
            psi.push(DMatrix::identity(d, d));
            continue;
        }
        let mut m = DMatrix::zeros(d, d);
        for (j, b) in coeffs.iter().enumerate().take(h) {
            m.gemm(1.0, b, &psi[h - j - 1], 1.0);
        }
        psi.push(m);
    }
    psi
}

/// Companion matrix `[B⁽¹⁾ … B⁽ᵖ⁾; I 0]` of a VAR(p).
pub fn companion_matrix(coeffs: &[DMatrix<f64>], d: usize) -> DMatrix<f64> {
    let p = coeffs.len().max(1);
    let mut a = DMatrix::zeros(d * p, d * p);
    for (j, b) in coeffs.iter().enumerate() {
        a.view_mut((0, j * d), (d, d)).copy_from(b);
    }
    for j in 1..p {
        a.view_mut((j * d, (j - 1) * d), (d, d))
            .fill_with_identity();
    }
    a
}

/// `diag(Σ_u, Σ_v)` with exactly zero off-diagonal blocks.
pub fn block_diagonal(sigma_u: &DMatrix<f64>, sigma_v: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, n) = (sigma_u.nrows(), sigma_v.nrows());
    let mut m = DMatrix::zeros(r + n, r + n);
    m.view_mut((0, 0), (r, r)).copy_from(sigma_u);
    m.view_mut((r, r), (n, n)).copy_from(sigma_v);
    m
}

fn check_square(m: &DMatrix<f64>, d: usize, context: &'static str) -> Result<()> {
    if m.shape() != (d, d) {
        return Err(Error::Dimension {
            context,
            expected: d,
            actual: if m.nrows() != d { m.nrows() } else { m.ncols() },
        });
    }
    Ok(())
}

/// `x_t = Σ_h (ΛΨ_f⁽ʰ⁾ | Ψ_ξ⁽ʰ⁾) η_{t−h}` truncated at `horizon` terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMaRepresentation {
    #[serde(with = "matrix_serde::vec")]
    pub psi_f: Vec<DMatrix<f64>>,
    #[serde(with = "matrix_serde::vec")]
    pub psi_xi: Vec<DMatrix<f64>>,
    #[serde(with = "matrix_serde")]
    pub loadings: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub sigma_eta: DMatrix<f64>,
}

impl JointMaRepresentation {
    pub fn new(
        loadings: &DMatrix<f64>,
        factor_coeffs: &[DMatrix<f64>],
        idio_coeffs: &[DMatrix<f64>],
        sigma_u: &DMatrix<f64>,
        sigma_v: &DMatrix<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let (n, r) = loadings.shape();
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        for d in factor_coeffs {
            check_square(d, r, "factor VAR coefficients")?;
        }
        for b in idio_coeffs {
            check_square(b, n, "idiosyncratic VAR coefficients")?;
        }
        Self::from_ma(
            loadings,
            var_to_ma(factor_coeffs, r, horizon),
            var_to_ma(idio_coeffs, n, horizon),
            sigma_u,
            sigma_v,
        )
    }

    /// Build from MA matrices estimated by other means; both lists must have
    /// the same nonzero length.
    pub fn from_ma(
        loadings: &DMatrix<f64>,
        psi_f: Vec<DMatrix<f64>>,
        psi_xi: Vec<DMatrix<f64>>,
        sigma_u: &DMatrix<f64>,
        sigma_v: &DMatrix<f64>,
    ) -> Result<Self> {
        let (n, r) = loadings.shape();
        if psi_f.is_empty() || psi_f.len() != psi_xi.len() {
            return Err(Error::InvalidParameter(format!(
                "need equally many factor and idiosyncratic MA terms, got {} and {}",
                psi_f.len(),
                psi_xi.len()
            )));
        }
        check_square(sigma_u, r, "factor innovation covariance")?;
        check_square(sigma_v, n, "idiosyncratic innovation covariance")?;
        for m in &psi_f {
            check_square(m, r, "factor MA matrices")?;
        }
        for m in &psi_xi {
            check_square(m, n, "idiosyncratic MA matrices")?;
        }
        let rep = JointMaRepresentation {
            psi_f,
            psi_xi,
            loadings: loadings.clone(),
            sigma_eta: block_diagonal(sigma_u, sigma_v),
        };
        for m in rep
            .psi_f
            .iter()
            .chain(&rep.psi_xi)
            .chain([&rep.loadings, &rep.sigma_eta])
        {
            ensure_finite(m, "joint MA representation")?;
        }
        Ok(rep)
    }

    pub fn horizon(&self) -> usize {
        self.psi_xi.len()
    }

    pub fn n_series(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn n_shocks(&self) -> usize {
        self.sigma_eta.nrows()
    }

    /// The `N × (r+N)` impulse matrix `(ΛΨ_f⁽ʰ⁾ | Ψ_ξ⁽ʰ⁾)`.
    pub fn impulse(&self, h: usize) -> DMatrix<f64> {
        let (n, r) = self.loadings.shape();
        let mut m = DMatrix::zeros(n, r + n);
        m.view_mut((0, 0), (n, r))
            .copy_from(&(&self.loadings * &self.psi_f[h]));
        m.view_mut((0, r), (n, n)).copy_from(&self.psi_xi[h]);
        m
    }

    fn shock_scale(&self, j: usize) -> Result<f64> {
        let s = self.sigma_eta[(j, j)];
        if s > 0.0 {
            Ok(s)
        } else {
            Err(Error::DegenerateShock(j))
        }
    }
}

/// Generalized impulse responses to a one-standard-deviation shock `j`:
/// column `h` is `(ΛΨ_f⁽ʰ⁾ | Ψ_ξ⁽ʰ⁾) Σ_η e_j / (e_jᵀ Σ_η e_j)^{1/2}`.
pub fn girf(rep: &JointMaRepresentation, j: usize) -> Result<DMatrix<f64>> {
    if j >= rep.n_shocks() {
        return Err(Error::InvalidParameter(format!(
            "shock index {j} out of range 0..{}",
            rep.n_shocks()
        )));
    }
    let scale = rep.shock_scale(j)?.sqrt();
    let col: DVector<f64> = rep.sigma_eta.column(j) / scale;
    let mut out = DMatrix::zeros(rep.n_series(), rep.horizon());
    for h in 0..rep.horizon() {
        out.set_column(h, &(rep.impulse(h) * &col));
    }
    Ok(out)
}

/// Generalized forecast error variance decomposition `θ^g(H)`, `N × (r+N)`,
/// summing exactly `H` MA terms.
pub fn gfevd(rep: &JointMaRepresentation) -> Result<DMatrix<f64>> {
    let (n, k) = (rep.n_series(), rep.n_shocks());
    let scales: Vec<f64> = (0..k).map(|j| rep.shock_scale(j)).collect::<Result<_>>()?;
    let mut num = DMatrix::<f64>::zeros(n, k);
    let mut den = DVector::<f64>::zeros(n);
    for h in 0..rep.horizon() {
        let a = rep.impulse(h);
        let a_sigma = &a * &rep.sigma_eta;
        num += a_sigma.map(|v| v * v);
        for i in 0..n {
            den[i] += a_sigma.row(i).dot(&a.row(i));
        }
    }
    for i in 0..n {
        if !(den[i] > 0.0) {
            return Err(Error::ZeroVariance(i));
        }
    }
    Ok(DMatrix::from_fn(n, k, |i, j| {
        num[(i, j)] / scales[j] / den[i]
    }))
}

/// Row-normalized shares and the aggregate connectedness measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectednessTable {
    /// `C_{i←j}`: targets in rows, the `r` factor shocks then the `N` idiosyncratic shocks in columns.
    #[serde(with = "matrix_serde")]
    pub theta: DMatrix<f64>,
    pub horizon: usize,
    pub n_factors: usize,
    pub swc: f64,
    pub swc_mkt: f64,
    pub swc_ids: f64,
    /// `C_{i←All}`: share of series `i` from every shock except its own, over `N`.
    pub from_degree: Vec<f64>,
    /// `C_{All←i}`: share series `i`'s idiosyncratic shock sends to the others, over `N`.
    pub to_degree: Vec<f64>,
}

/// Normalize each row of `θ^g` to sum to one and aggregate.
pub fn connectedness_table(
    theta_g: &DMatrix<f64>,
    r: usize,
    horizon: usize,
) -> Result<ConnectednessTable> {
    let n = theta_g.nrows();
    if theta_g.ncols() != r + n {
        return Err(Error::Dimension {
            context: "variance decomposition columns",
            expected: r + n,
            actual: theta_g.ncols(),
        });
    }
    ensure_finite(theta_g, "variance decomposition")?;
    if theta_g.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidParameter(
            "variance decomposition has negative entries".into(),
        ));
    }
    let mut theta = theta_g.clone();
    for i in 0..n {
        let total = theta.row(i).sum();
        if !(total > 0.0) {
            return Err(Error::ZeroVariance(i));
        }
        theta.row_mut(i).unscale_mut(total);
    }
    let nf = n as f64;
    let mut swc_mkt = 0.0;
    let mut swc_ids = 0.0;
    let mut from_degree = vec![0.0; n];
    let mut to_degree = vec![0.0; n];
    for i in 0..n {
        let mkt: f64 = (0..r).map(|j| theta[(i, j)]).sum();
        let ids: f64 = (0..n).filter(|&k| k != i).map(|k| theta[(i, r + k)]).sum();
        swc_mkt += mkt;
        swc_ids += ids;
        from_degree[i] = (mkt + ids) / nf;
        to_degree[i] = (0..n)
            .filter(|&k| k != i)
            .map(|k| theta[(k, r + i)])
            .sum::<f64>()
            / nf;
    }
    swc_mkt /= nf;
    swc_ids /= nf;
    Ok(ConnectednessTable {
        theta,
        horizon,
        n_factors: r,
        swc: swc_mkt + swc_ids,
        swc_mkt,
        swc_ids,
        from_degree,
        to_degree,
    })
}

impl ConnectednessTable {
    /// Source labels: `factor_1 … factor_r` then the series names.
    pub fn source_labels(&self, names: &[String]) -> Vec<String> {
        (1..=self.n_factors)
            .map(|k| format!("factor_{k}"))
            .chain(names.iter().cloned())
            .collect()
    }

    /// Pairwise table as CSV: one row per target series, one column per source.
    pub fn write_csv<W: Write>(&self, writer: W, names: &[String]) -> Result<()> {
        if names.len() != self.theta.nrows() {
            return Err(Error::Dimension {
                context: "series names",
                expected: self.theta.nrows(),
                actual: names.len(),
            });
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["target".to_string()];
        header.extend(self.source_labels(names));
        w.write_record(&header)?;
        for (i, name) in names.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(self.theta.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
