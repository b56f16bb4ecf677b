//! Rules turning band decompositions into band connectedness measures.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{no_params, Registry};

/// System-wide connectedness over one band and its split by shock type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandMeasures {
    pub swc: f64,
    pub swc_mkt: f64,
    pub swc_ids: f64,
}

/// Maps a band decomposition `θ_d` and the total `θ(∞)` (both `N × (r+N)`)
/// to band measures.
pub trait BandAggregation: Send + Sync {
    fn name(&self) -> &'static str;
    fn aggregate(
        &self,
        theta_band: &DMatrix<f64>,
        theta_total: &DMatrix<f64>,
        r: usize,
    ) -> Result<BandMeasures>;
}

/// Shares `(θ_d)_kj / Σ_j θ(∞)_kj`. Measures add up across a partition of
/// `(0, π]` to the measures computed from `θ(∞)`.
#[derive(Debug, Clone, Copy)]
pub struct Additive;

/// Additive shares multiplied by `Σθ_d / Σθ(∞)`.
#[derive(Debug, Clone, Copy)]
pub struct Scaled;

fn check(theta_band: &DMatrix<f64>, theta_total: &DMatrix<f64>, r: usize) -> Result<()> {
    let (n, k) = theta_total.shape();
    if k != n + r {
        return Err(Error::Dimension {
            context: "band aggregation shock count",
            expected: n + r,
            actual: k,
        });
    }
    if theta_band.shape() != (n, k) {
        return Err(Error::Dimension {
            context: "band decomposition",
            expected: n,
            actual: theta_band.nrows(),
        });
    }
    Ok(())
}

fn additive_measures(
    theta_band: &DMatrix<f64>,
    theta_total: &DMatrix<f64>,
    r: usize,
) -> Result<BandMeasures> {
    check(theta_band, theta_total, r)?;
    let n = theta_total.nrows();
    let (mut mkt, mut ids) = (0.0, 0.0);
    for k in 0..n {
        let total: f64 = theta_total.row(k).sum();
        if !(total > 0.0) {
            return Err(Error::ZeroVariance(k));
        }
        mkt += theta_band.row(k).columns(0, r).sum() / total;
        ids += (theta_band.row(k).columns(r, n).sum() - theta_band[(k, r + k)]) / total;
    }
    let (mkt, ids) = (mkt / n as f64, ids / n as f64);
    Ok(BandMeasures {
        swc: mkt + ids,
        swc_mkt: mkt,
        swc_ids: ids,
    })
}

impl BandAggregation for Additive {
    fn name(&self) -> &'static str {
        "additive"
    }

    fn aggregate(
        &self,
        theta_band: &DMatrix<f64>,
        theta_total: &DMatrix<f64>,
        r: usize,
    ) -> Result<BandMeasures> {
        additive_measures(theta_band, theta_total, r)
    }
}

impl BandAggregation for Scaled {
    fn name(&self) -> &'static str {
        "scaled"
    }

    fn aggregate(
        &self,
        theta_band: &DMatrix<f64>,
        theta_total: &DMatrix<f64>,
        r: usize,
    ) -> Result<BandMeasures> {
        let m = additive_measures(theta_band, theta_total, r)?;
        let total = theta_total.sum();
        if !(total > 0.0) {
            return Err(Error::ZeroVariance(0));
        }
        let s = theta_band.sum() / total;
        Ok(BandMeasures {
            swc: m.swc * s,
            swc_mkt: m.swc_mkt * s,
            swc_ids: m.swc_ids * s,
        })
    }
}

pub fn registry() -> Registry<dyn BandAggregation> {
    let mut reg: Registry<dyn BandAggregation> = Registry::new("band aggregation");
    reg.register("additive", |p| {
        no_params(p)?;
        Ok(Box::new(Additive))
    });
    reg.register("scaled", |p| {
        no_params(p)?;
        Ok(Box::new(Scaled))
    });
    reg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta() -> DMatrix<f64> {
        // N = 2, r = 1
        DMatrix::from_row_slice(2, 3, &[0.2, 0.5, 0.1, 0.3, 0.2, 0.6])
    }

    #[test]
    fn additive_hand_values() {
        let t = theta();
        let m = Additive.aggregate(&t, &t, 1).unwrap();
        // row totals 0.8 and 1.1
        let mkt = (0.2 / 0.8 + 0.3 / 1.1) / 2.0;
        let ids = (0.1 / 0.8 + 0.2 / 1.1) / 2.0;
        assert!((m.swc_mkt - mkt).abs() < 1e-15);
        assert!((m.swc_ids - ids).abs() < 1e-15);
        assert!((m.swc - mkt - ids).abs() < 1e-15);
    }

    #[test]
    fn additive_splits_across_bands() {
        let t = theta();
        let lo = &t * 0.3;
        let hi = &t * 0.7;
        let a = Additive.aggregate(&lo, &t, 1).unwrap();
        let b = Additive.aggregate(&hi, &t, 1).unwrap();
        let all = Additive.aggregate(&t, &t, 1).unwrap();
        assert!((a.swc + b.swc - all.swc).abs() < 1e-15);
        let s = Scaled.aggregate(&lo, &t, 1).unwrap();
        assert!((s.swc - 0.3 * a.swc).abs() < 1e-15);
        assert_eq!(Scaled.aggregate(&t, &t, 1).unwrap(), all);
    }

    #[test]
    fn shape_checked() {
        let t = theta();
        assert!(Additive.aggregate(&t, &t, 2).is_err());
        assert!(registry().contains("scaled"));
    }
}
