//! Frequency grids on `(0, π]` and frequency bands.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quadrature nodes on `(0, π]` with weights summing to `π`. Integrals over
/// `(−π, π)` of even integrands are twice the weighted sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl FrequencyGrid {
    /// `m` cell midpoints `(k − ½)π/m` with equal weights `π/m`. Mirrored onto
    /// `(−π, π)` this is the periodic trapezoid rule on `2m` equispaced nodes.
    pub fn midpoint(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter(
                "frequency grid needs at least one point".into(),
            ));
        }
        let h = PI / m as f64;
        Ok(FrequencyGrid {
            points: (0..m).map(|k| (k as f64 + 0.5) * h).collect(),
            weights: vec![h; m],
        })
    }

    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::Quadrature(
                "points and weights must be nonempty and of equal length".into(),
            ));
        }
        if points.windows(2).any(|w| w[1] <= w[0])
            || points[0] <= 0.0
            || *points.last().unwrap() > PI
        {
            return Err(Error::Quadrature(
                "points must increase strictly within (0, pi]".into(),
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Quadrature("weights must be positive".into()));
        }
        let grid = FrequencyGrid { points, weights };
        grid.check()?;
        Ok(grid)
    }

    /// Weights must sum to `π`.
    pub fn check(&self) -> Result<()> {
        let total: f64 = self.weights.iter().sum();
        if (total - PI).abs() > 1e-10 {
            return Err(Error::Quadrature(format!(
                "weights sum to {total}, expected pi"
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Frequencies `[a, b)`; a band ending at `π` also contains `π`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyBand {
    pub name: String,
    pub a: f64,
    pub b: f64,
}

impl FrequencyBand {
    pub fn new(name: &str, a: f64, b: f64) -> Result<Self> {
        if !(0.0 <= a && a < b && b <= PI) {
            return Err(Error::InvalidParameter(format!(
                "band '{name}' needs 0 <= a < b <= pi, got ({a}, {b})"
            )));
        }
        Ok(FrequencyBand {
            name: name.to_string(),
            a,
            b,
        })
    }

    /// The band of periods `[lo, hi)` in observations, `hi = ∞` allowed.
    pub fn from_periods(name: &str, lo: f64, hi: f64) -> Result<Self> {
        let a = if hi.is_infinite() { 0.0 } else { 2.0 * PI / hi };
        Self::new(name, a, (2.0 * PI / lo).min(PI))
    }

    pub fn contains(&self, omega: f64) -> bool {
        (self.a <= omega && omega < self.b) || (self.b >= PI && omega == PI)
    }
}

/// Yearly (periods over 60 days), quarterly (20 to 60) and monthly (up to 20).
pub fn default_bands() -> Vec<FrequencyBand> {
    vec![
        FrequencyBand::new("yearly", 0.0, 2.0 * PI / 60.0).expect("valid band"),
        FrequencyBand::new("quarterly", 2.0 * PI / 60.0, 2.0 * PI / 20.0).expect("valid band"),
        FrequencyBand::new("monthly", 2.0 * PI / 20.0, PI).expect("valid band"),
    ]
}

/// The whole half-line `(0, π]` as one band.
pub fn full_band() -> Vec<FrequencyBand> {
    vec![FrequencyBand::new("all", 0.0, PI).expect("valid band")]
}

/// Bands must be individually valid, pairwise disjoint, uniquely named, and
/// cover `(0, π]` without gaps.
pub fn validate_partition(bands: &[FrequencyBand]) -> Result<()> {
    if bands.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one frequency band is required".into(),
        ));
    }
    for band in bands {
        FrequencyBand::new(&band.name, band.a, band.b)?;
    }
    for (i, x) in bands.iter().enumerate() {
        for y in &bands[i + 1..] {
            if x.name == y.name {
                return Err(Error::InvalidParameter(format!(
                    "duplicate band name '{}'",
                    x.name
                )));
            }
            if x.a < y.b && y.a < x.b {
                return Err(Error::InvalidParameter(format!(
                    "bands '{}' ({}, {}) and '{}' ({}, {}) overlap",
                    x.name, x.a, x.b, y.name, y.a, y.b
                )));
            }
        }
    }
    let mut sorted: Vec<&FrequencyBand> = bands.iter().collect();
    sorted.sort_by(|x, y| x.a.total_cmp(&y.a));
    let tol = 1e-12;
    let mut edge = 0.0;
    for band in sorted {
        if (band.a - edge).abs() > tol {
            return Err(Error::InvalidParameter(format!(
                "bands leave a gap between {edge} and {}",
                band.a
            )));
        }
        edge = band.b;
    }
    if (edge - PI).abs() > tol {
        return Err(Error::InvalidParameter(format!(
            "bands stop at {edge}, short of pi"
        )));
    }
    Ok(())
}

/// For each grid point, the index of the band containing it.
pub fn assign_bands(grid: &FrequencyGrid, bands: &[FrequencyBand]) -> Result<Vec<usize>> {
    grid.points()
        .iter()
        .map(|&w| {
            let hits: Vec<usize> = (0..bands.len()).filter(|&d| bands[d].contains(w)).collect();
            match hits.as_slice() {
                [d] => Ok(*d),
                [] => Err(Error::Quadrature(format!("frequency {w} is in no band"))),
                _ => Err(Error::Quadrature(format!(
                    "frequency {w} is in several bands"
                ))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_weights_sum_to_pi() {
        let g = FrequencyGrid::midpoint(512).unwrap();
        assert!((g.weights().iter().sum::<f64>() - PI).abs() < 1e-12);
        assert!(g.points()[0] > 0.0 && *g.points().last().unwrap() < PI);
    }

    #[test]
    fn midpoint_rule_is_exact_for_trig_polynomials() {
        let g = FrequencyGrid::midpoint(64).unwrap();
        for m in 0..100usize {
            // ∫_{-π}^{π} cos(mω) dω = 2π·[m = 0]
            let integral: f64 = 2.0
                * g.points()
                    .iter()
                    .zip(g.weights())
                    .map(|(w, q)| q * (m as f64 * w).cos())
                    .sum::<f64>();
            let exact = if m == 0 { 2.0 * PI } else { 0.0 };
            assert!((integral - exact).abs() < 1e-12, "m={m}: {integral}");
        }
    }

    #[test]
    fn default_bands_partition() {
        validate_partition(&default_bands()).unwrap();
        let g = FrequencyGrid::midpoint(512).unwrap();
        let idx = assign_bands(&g, &default_bands()).unwrap();
        assert_eq!(idx[0], 0);
        assert_eq!(*idx.last().unwrap(), 2);
    }

    #[test]
    fn overlapping_and_gapped_bands_rejected() {
        let overlap = vec![
            FrequencyBand::new("lo", 0.0, 1.0).unwrap(),
            FrequencyBand::new("hi", 0.9, PI).unwrap(),
        ];
        let err = validate_partition(&overlap).unwrap_err().to_string();
        assert!(err.contains("lo") && err.contains("hi"));
        let gap = vec![
            FrequencyBand::new("lo", 0.0, 1.0).unwrap(),
            FrequencyBand::new("hi", 1.1, PI).unwrap(),
        ];
        assert!(validate_partition(&gap).is_err());
    }

    #[test]
    fn top_band_contains_pi() {
        let grid = FrequencyGrid::new(vec![1.0, PI], vec![PI / 2.0, PI / 2.0]).unwrap();
        assert_eq!(assign_bands(&grid, &default_bands()).unwrap(), vec![2, 2]);
    }

    #[test]
    fn period_bands() {
        let b = FrequencyBand::from_periods("q", 20.0, 60.0).unwrap();
        assert!((b.a - 2.0 * PI / 60.0).abs() < 1e-15 && (b.b - 2.0 * PI / 20.0).abs() < 1e-15);
        assert_eq!(
            FrequencyBand::from_periods("y", 60.0, f64::INFINITY)
                .unwrap()
                .a,
            0.0
        );
    }
}
