//! Elementwise thresholding rules for estimated VAR coefficient matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::registry::{no_params, param, Registry};

pub trait Threshold: Send + Sync {
    fn name(&self) -> &'static str;

    /// Thresholded value of a single coefficient. Must preserve sign and
    /// never increase magnitude.
    fn apply(&self, z: f64, lambda: f64) -> f64;
}

/// `THR(z) = z (1 − |λ/z|^ν)_+`; ν = 1 is soft, ν = ∞ is hard thresholding.
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveThreshold {
    nu: f64,
}

impl AdaptiveThreshold {
    pub fn new(nu: f64) -> Result<Self> {
        if nu.is_nan() || nu < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "threshold exponent nu must be >= 1, got {nu}"
            )));
        }
        Ok(AdaptiveThreshold { nu })
    }

    pub fn soft() -> Self {
        AdaptiveThreshold { nu: 1.0 }
    }

    pub fn hard() -> Self {
        AdaptiveThreshold { nu: f64::INFINITY }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }
}

impl Threshold for AdaptiveThreshold {
    fn name(&self) -> &'static str {
        if self.nu == 1.0 {
            "soft"
        } else if self.nu.is_infinite() {
            "hard"
        } else {
            "adaptive"
        }
    }

    fn apply(&self, z: f64, lambda: f64) -> f64 {
        if lambda == 0.0 {
            return z;
        }
        if z == 0.0 || z.abs() <= lambda {
            return 0.0;
        }
        if self.nu.is_infinite() {
            return z;
        }
        let shrink = 1.0 - (lambda / z.abs()).powf(self.nu);
        z * shrink.max(0.0)
    }
}

/// Built-in rules: `soft`, `hard`, and `adaptive` (parameter `nu`, default 2).
pub fn registry() -> Registry<dyn Threshold> {
    let mut reg: Registry<dyn Threshold> = Registry::new("threshold rule");
    reg.register("soft", |p| {
        no_params(p)?;
        Ok(Box::new(AdaptiveThreshold::soft()))
    });
    reg.register("hard", |p| {
        no_params(p)?;
        Ok(Box::new(AdaptiveThreshold::hard()))
    });
    reg.register("adaptive", |p| {
        Ok(Box::new(AdaptiveThreshold::new(param(
            p,
            "nu",
            2.0,
            &["nu"],
        )?)?))
    });
    reg
}

/// Apply `rule` elementwise to every matrix.
pub fn apply_threshold(
    coeffs: &[DMatrix<f64>],
    lambda: f64,
    rule: &dyn Threshold,
) -> Result<Vec<DMatrix<f64>>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be >= 0, got {lambda}"
        )));
    }
    Ok(coeffs
        .iter()
        .map(|m| m.map(|z| rule.apply(z, lambda)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::StrategySpec;
    use proptest::prelude::*;

    #[test]
    fn zero_threshold_is_identity() {
        let m = DMatrix::from_row_slice(2, 2, &[0.3, -0.01, 0.0, 2.0]);
        for nu in [1.0, 2.5, f64::INFINITY] {
            let out =
                apply_threshold(&[m.clone()], 0.0, &AdaptiveThreshold::new(nu).unwrap()).unwrap();
            assert_eq!(out[0], m);
        }
    }

    #[test]
    fn hard_threshold_boundary() {
        let hard = AdaptiveThreshold::hard();
        assert_eq!(hard.apply(0.4, 0.5), 0.0);
        assert_eq!(hard.apply(-0.6, 0.5), -0.6);
    }

    #[test]
    fn soft_threshold_value() {
        assert_eq!(AdaptiveThreshold::soft().apply(2.0, 1.0), 1.0);
        assert_eq!(AdaptiveThreshold::soft().apply(-2.0, 1.0), -1.0);
    }

    #[test]
    fn registry_builds_rules() {
        let reg = registry();
        let adaptive = reg
            .build(&StrategySpec::named("adaptive").with("nu", 3.0))
            .unwrap();
        assert!((adaptive.apply(2.0, 1.0) - 2.0 * (1.0 - 0.125)).abs() < 1e-15);
        assert!(reg
            .build(&StrategySpec::named("adaptive").with("nu", 0.5))
            .is_err());
        assert_eq!(
            reg.build(&StrategySpec::named("hard")).unwrap().name(),
            "hard"
        );
    }

    proptest! {
        #[test]
        fn never_grows_and_keeps_sign(z in -5.0f64..5.0, lambda in 0.0f64..3.0, nu in 1.0f64..10.0) {
            for rule in [AdaptiveThreshold::new(nu).unwrap(), AdaptiveThreshold::hard()] {
                let out = rule.apply(z, lambda);
                prop_assert!(out.abs() <= z.abs());
                prop_assert!(out == 0.0 || out.signum() == z.signum());
            }
        }
    }
}
