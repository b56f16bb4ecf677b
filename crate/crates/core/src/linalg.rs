//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariance of the rows of `m` (observations in rows), demeaned, divisor `n`.
pub fn sample_covariance(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(m.ncols(), m.ncols());
    }
    let centered = demean_columns(m);
    let mut cov = centered.transpose() * &centered / n as f64;
    symmetrize(&mut cov);
    cov
}

pub fn demean_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn ensure_finite(m: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::Singular(context))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Solve `a x = b` for symmetric positive definite `a`.
pub fn spd_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    context: &'static str,
) -> Result<DMatrix<f64>> {
    let chol = a.clone().cholesky().ok_or(Error::Singular(context))?;
    Ok(chol.solve(b))
}

/// A factor `L` with `L Lᵀ = m` for sampling. Falls back to an eigenvalue-clipped
/// square root when `m` is not numerically positive definite; the flag reports that.
pub fn sampling_factor(m: &DMatrix<f64>, floor: f64) -> Result<(DMatrix<f64>, bool)> {
    ensure_finite(m, "sampling covariance")?;
    if let Some(chol) = m.clone().cholesky() {
        return Ok((chol.l(), false));
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let clipped: DVector<f64> = eig.eigenvalues.map(|v| v.max(floor).sqrt());
    let factor = &eig.eigenvectors * DMatrix::from_diagonal(&clipped);
    Ok((factor, true))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Lagged regressor matrix for a VAR(p) on the rows of `x`.
///
/// Row `t - p` holds `(x_{t-1}ᵀ, …, x_{t-p}ᵀ)` for `t = p, …, T-1`, so column
/// `(l - 1) * N + k` is series `k` at lag `l`.
pub fn lagged_design(x: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let (t, n) = x.shape();
    let rows = t.saturating_sub(p);
    DMatrix::from_fn(rows, n * p, |row, col| {
        let lag = col / n + 1;
        let k = col % n;
        x[(row + p - lag, k)]
    })
}

/// Split a `d × (d·p)` stacked coefficient matrix into its `p` lag blocks.
pub fn split_lag_blocks(stacked: &DMatrix<f64>, d: usize, p: usize) -> Vec<DMatrix<f64>> {
    (0..p)
        .map(|l| stacked.columns(l * d, d).into_owned())
        .collect()
}

/// Row-major matrix layout used in the JSON exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        MatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl TryFrom<MatrixJson> for DMatrix<f64> {
    type Error = Error;

    fn try_from(m: MatrixJson) -> Result<Self> {
        if m.data.len() != m.rows * m.cols {
            return Err(Error::Dimension {
                context: "matrix json",
                expected: m.rows * m.cols,
                actual: m.data.len(),
            });
        }
        Ok(DMatrix::from_row_slice(m.rows, m.cols, &m.data))
    }
}

/// Serde adapters so fitted models serialize matrices as [`MatrixJson`].
pub(crate) mod matrix_serde {
    use super::MatrixJson;
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        MatrixJson::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let m = MatrixJson::deserialize(d)?;
        DMatrix::try_from(m).map_err(serde::de::Error::custom)
    }

    pub mod vec {
        use super::MatrixJson;
        use nalgebra::DMatrix;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
            ms.iter()
                .map(MatrixJson::from)
                .collect::<Vec<_>>()
                .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
            Vec::<MatrixJson>::deserialize(d)?
                .into_iter()
                .map(|m| DMatrix::try_from(m).map_err(serde::de::Error::custom))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lagged_design_layout() {
        // two series, values encode (t, k)
        let x = DMatrix::from_fn(5, 2, |t, k| (10 * t + k) as f64);
        let z = lagged_design(&x, 2);
        assert_eq!(z.shape(), (3, 4));
        // first row corresponds to t = 2: lag 1 is t = 1, lag 2 is t = 0
        assert_eq!(
            z.row(0).iter().copied().collect::<Vec<_>>(),
            vec![10.0, 11.0, 0.0, 1.0]
        );
        assert_eq!(z[(2, 0)], 30.0);
    }

    #[test]
    fn sampling_factor_clips_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (l, clipped) = sampling_factor(&m, 1e-12).unwrap();
        assert!(clipped);
        let back = &l * l.transpose();
        assert!((back - m).abs().max() < 1e-6);
    }

    #[test]
    fn matrix_json_is_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let j = MatrixJson::from(&m);
        assert_eq!(j.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(DMatrix::try_from(j).unwrap(), m);
    }
}
