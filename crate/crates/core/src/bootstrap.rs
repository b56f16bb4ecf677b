//! Parametric bootstrap for the connectedness measures.
//!
//! Pseudo panels are simulated from the fitted model with Gaussian
//! innovations, the whole pipeline is re-estimated at the original model order,
//! and intervals come from the distribution of `θ̂* − θ̂`.

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connectedness::var_to_ma;
use crate::error::{Error, Result};
use crate::pipeline::{Estimator, PenaltyChoice, WindowEstimate};
use crate::registry::{no_params, Registry, StrategySpec};
use crate::sim::{FactorModelDgp, SimulatedPanel};
use crate::sparsevar::SparseVarFit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub burn_in: usize,
    pub confidence: f64,
    pub seed: u64,
    pub ma_estimator: StrategySpec,
    /// Abort when more than this share of replications fails.
    pub max_failure_rate: f64,
    /// Also band the frequency-domain measures.
    pub spectral: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replications: 499,
            burn_in: 200,
            confidence: 0.95,
            seed: 0,
            ma_estimator: StrategySpec::named("plugin"),
            max_failure_rate: 0.1,
            spectral: true,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::InvalidParameter(
                "bootstrap needs at least 2 replications".into(),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::InvalidParameter(
                "max_failure_rate must lie in [0, 1]".into(),
            ));
        }
        ma_registry().build(&self.ma_estimator)?;
        Ok(())
    }
}

/// Estimates the idiosyncratic MA matrices `Ψ_ξ⁽⁰⁾ … Ψ_ξ⁽ᴴ⁻¹⁾` inside each
/// replication. A de-sparsified estimator that corrects the LASSO shrinkage
/// bias plugs in here.
pub trait MaEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn idio_ma(
        &self,
        fit: &SparseVarFit,
        idio: &DMatrix<f64>,
        horizon: usize,
    ) -> Result<Vec<DMatrix<f64>>>;
}

/// MA matrices of the estimated sparse VAR itself.
#[derive(Debug, Clone, Copy)]
pub struct PlugIn;

impl MaEstimator for PlugIn {
    fn name(&self) -> &'static str {
        "plugin"
    }

    fn idio_ma(
        &self,
        fit: &SparseVarFit,
        _idio: &DMatrix<f64>,
        horizon: usize,
    ) -> Result<Vec<DMatrix<f64>>> {
        Ok(var_to_ma(&fit.coeffs, fit.n_series(), horizon))
    }
}

pub fn ma_registry() -> Registry<dyn MaEstimator> {
    let mut reg: Registry<dyn MaEstimator> = Registry::new("MA estimator");
    reg.register("plugin", |p| {
        no_params(p)?;
        Ok(Box::new(PlugIn))
    });
    reg
}

/// The fitted model as a data-generating process, with the regularized
/// idiosyncratic innovation covariance.
pub fn fitted_dgp(est: &WindowEstimate) -> FactorModelDgp {
    FactorModelDgp {
        loadings: est.factor.loadings.clone(),
        factor_coeffs: est.factor.factor_var_coeffs.clone(),
        factor_cov: est.factor.factor_resid_cov.clone(),
        idio_coeffs: est.sparse.coeffs.clone(),
        idio_cov: est.precision.covariance.clone(),
    }
}

/// Simulate `t` observations from the fitted model.
pub fn generate_pseudo_panel<R: Rng + ?Sized>(
    est: &WindowEstimate,
    t: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<SimulatedPanel> {
    fitted_dgp(est).simulate(t, burn_in, rng)
}

/// Generator for replication `index` of stream `stream` (for instance the
/// window number) under master seed `seed`.
pub fn replication_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `[θ̂ − q_{1−α/2}(θ̂* − θ̂), θ̂ − q_{α/2}(θ̂* − θ̂)]`.
pub fn basic_interval(point: f64, replicates: &[f64], confidence: f64) -> (f64, f64) {
    let mut dev: Vec<f64> = replicates.iter().map(|v| v - point).collect();
    dev.sort_by(f64::total_cmp);
    let alpha = 1.0 - confidence;
    let lower = point - quantile_sorted(&dev, 1.0 - alpha / 2.0);
    let upper = point - quantile_sorted(&dev, alpha / 2.0);
    (lower, upper)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandedMeasure {
    pub measure: String,
    #[serde(flatten)]
    pub band: Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandedSeries {
    /// One entry per measure of [`WindowEstimate::measures`], same order.
    pub measures: Vec<BandedMeasure>,
    /// Interval ends for every entry of the connectedness table.
    #[serde(with = "crate::linalg::matrix_serde")]
    pub table_lower: DMatrix<f64>,
    #[serde(with = "crate::linalg::matrix_serde")]
    pub table_upper: DMatrix<f64>,
    pub replications: usize,
    pub failed: usize,
}

struct Replicate {
    measures: Vec<f64>,
    table: DMatrix<f64>,
}

/// Bootstrap intervals around `est`, the estimate of `estimator` on a window.
/// `stream` separates the random streams of different windows.
pub fn bootstrap_connectedness(
    estimator: &Estimator,
    est: &WindowEstimate,
    cfg: &BootstrapConfig,
    stream: u64,
) -> Result<BandedSeries> {
    cfg.validate()?;
    let ma = ma_registry().build(&cfg.ma_estimator)?;
    let ma_fn = |fit: &SparseVarFit, idio: &DMatrix<f64>, h: usize| ma.idio_ma(fit, idio, h);
    let spectral = cfg.spectral && est.spectral.is_some();
    let point: Vec<(String, f64)> = est
        .measures()
        .into_iter()
        .filter(|(name, _)| spectral || !name.contains("_band:"))
        .collect();
    let t = est.n_obs();
    let rho = est.precision.penalty;

    let results: Vec<Option<Replicate>> = (0..cfg.replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = replication_rng(cfg.seed, stream, b as u64);
            let mut run = || -> Result<Replicate> {
                let sim = generate_pseudo_panel(est, t, cfg.burn_in, &mut rng)?;
                let re = estimator.estimate_with(
                    &sim.x,
                    est.order,
                    PenaltyChoice::Fixed(rho),
                    Some(&ma_fn),
                    spectral,
                )?;
                Ok(Replicate {
                    measures: re.measures().into_iter().map(|(_, v)| v).collect(),
                    table: re.table.theta,
                })
            };
            match run() {
                Ok(r) => Some(r),
                Err(e) => {
                    debug!("bootstrap replication {b} of stream {stream} failed: {e}");
                    None
                }
            }
        })
        .collect();

    let ok: Vec<Replicate> = results.into_iter().flatten().collect();
    let failed = cfg.replications - ok.len();
    if failed as f64 > cfg.max_failure_rate * cfg.replications as f64 || ok.len() < 2 {
        return Err(Error::BootstrapAborted {
            failed,
            total: cfg.replications,
        });
    }
    if failed > 0 {
        warn!(
            "{failed} of {} bootstrap replications failed and were skipped",
            cfg.replications
        );
    }

    let measures = point
        .iter()
        .enumerate()
        .map(|(k, (name, value))| {
            let reps: Vec<f64> = ok.iter().map(|r| r.measures[k]).collect();
            let (lower, upper) = basic_interval(*value, &reps, cfg.confidence);
            BandedMeasure {
                measure: name.clone(),
                band: Band {
                    point: *value,
                    lower,
                    upper,
                },
            }
        })
        .collect();
    let theta = &est.table.theta;
    let mut table_lower = DMatrix::zeros(theta.nrows(), theta.ncols());
    let mut table_upper = table_lower.clone();
    for i in 0..theta.nrows() {
        for j in 0..theta.ncols() {
            let reps: Vec<f64> = ok.iter().map(|r| r.table[(i, j)]).collect();
            let (lo, hi) = basic_interval(theta[(i, j)], &reps, cfg.confidence);
            table_lower[(i, j)] = lo;
            table_upper[(i, j)] = hi;
        }
    }
    Ok(BandedSeries {
        measures,
        table_lower,
        table_upper,
        replications: ok.len(),
        failed,
    })
}
