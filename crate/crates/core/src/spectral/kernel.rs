//! Lag windows for the smoothed autocovariance estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{no_params, Registry};

/// An even lag window supported on `(−1, 1)` with `K(0) = 1`.
pub trait LagWindow: Send + Sync {
    fn name(&self) -> &'static str;
    fn weight(&self, u: f64) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct Bartlett;

impl LagWindow for Bartlett {
    fn name(&self) -> &'static str {
        "bartlett"
    }

    fn weight(&self, u: f64) -> f64 {
        (1.0 - u.abs()).max(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Parzen;

impl LagWindow for Parzen {
    fn name(&self) -> &'static str {
        "parzen"
    }

    fn weight(&self, u: f64) -> f64 {
        let a = u.abs();
        if a <= 0.5 {
            1.0 - 6.0 * a * a + 6.0 * a * a * a
        } else if a < 1.0 {
            2.0 * (1.0 - a).powi(3)
        } else {
            0.0
        }
    }
}

pub fn registry() -> Registry<dyn LagWindow> {
    let mut reg: Registry<dyn LagWindow> = Registry::new("lag window");
    reg.register("bartlett", |p| {
        no_params(p)?;
        Ok(Box::new(Bartlett))
    });
    reg.register("parzen", |p| {
        no_params(p)?;
        Ok(Box::new(Parzen))
    });
    reg
}

/// Lag-window size `B_T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Bandwidth {
    /// `⌈T^{1/3}⌉`
    CubeRoot,
    Fixed {
        lags: usize,
    },
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::CubeRoot
    }
}

impl Bandwidth {
    pub fn resolve(&self, t: usize) -> Result<usize> {
        let b = match self {
            Bandwidth::CubeRoot => (t as f64).cbrt().ceil() as usize,
            Bandwidth::Fixed { lags } => *lags,
        };
        if b == 0 || b >= t {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must satisfy 1 <= B_T < T = {t}, got {b}"
            )));
        }
        Ok(b)
    }
}
