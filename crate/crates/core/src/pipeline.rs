//! One-window estimation: factors, factor VAR, sparse idiosyncratic VAR,
//! regularized innovation precision, and the connectedness measures.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::connectedness::{connectedness_table, gfevd, ConnectednessTable, JointMaRepresentation};
use crate::error::{Error, Result};
use crate::factor::{
    fit_factor_model, select_model_order, FactorModelFit, ModelOrder, OrderBounds, OrderSelection,
};
use crate::linalg::{demean_columns, sample_covariance};
use crate::precision::{
    graphical_lasso, select_glasso_penalty, GlassoConfig, RegularizedPrecision, RhoGrid,
};
use crate::registry::StrategySpec;
use crate::sparsevar::{
    apply_threshold, fit_sparse_var, threshold, LassoConfig, SparseVarFit, Threshold,
};
use crate::spectral::{
    aggregation, band_fevd, default_bands, kernel, panel_power, scale_spectrum,
    spectral_connectedness, validate_partition, BandAggregation, Bandwidth, FrequencyBand,
    FrequencyGrid, LagWindow, SpectralConnectedness,
};

/// Thresholding applied to the sparse VAR coefficients before they enter the
/// inverse idiosyncratic spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub rule: StrategySpec,
    /// `λ_ξ`; zero leaves the coefficients unchanged.
    pub lambda: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            rule: StrategySpec::named("adaptive").with("nu", 2.0),
            lambda: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub enabled: bool,
    pub kernel: StrategySpec,
    pub bandwidth: Bandwidth,
    /// Midpoints on `(0, π]`.
    pub grid_points: usize,
    /// MA terms in the transfer functions of the causation spectrum.
    pub ma_terms: usize,
    pub bands: Vec<FrequencyBand>,
    pub aggregation: StrategySpec,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            enabled: true,
            kernel: StrategySpec::named("bartlett"),
            bandwidth: Bandwidth::CubeRoot,
            grid_points: 512,
            ma_terms: 100,
            bands: default_bands(),
            aggregation: StrategySpec::named("additive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    /// Forecast horizon `H` of the time-domain decomposition.
    pub horizon: usize,
    pub lasso: LassoConfig,
    pub glasso: GlassoConfig,
    pub rho_grid: RhoGrid,
    pub threshold: ThresholdConfig,
    pub spectral: SpectralConfig,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            horizon: 10,
            lasso: LassoConfig::default(),
            glasso: GlassoConfig::default(),
            rho_grid: RhoGrid::default(),
            threshold: ThresholdConfig::default(),
            spectral: SpectralConfig::default(),
        }
    }
}

struct SpectralTools {
    window: Box<dyn LagWindow>,
    aggregation: Box<dyn BandAggregation>,
    grid: FrequencyGrid,
}

/// How the graphical-lasso penalty is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyChoice {
    /// BIC over the configured grid.
    Select,
    Fixed(f64),
}

/// Everything estimated on one window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowEstimate {
    pub order: ModelOrder,
    pub factor: FactorModelFit,
    pub sparse: SparseVarFit,
    /// Coefficients after thresholding, as used by the spectral measures.
    #[serde(with = "crate::linalg::matrix_serde::vec")]
    pub idio_coeffs_thresholded: Vec<DMatrix<f64>>,
    pub precision: RegularizedPrecision,
    pub table: ConnectednessTable,
    pub spectral: Option<SpectralConnectedness>,
}

impl WindowEstimate {
    pub fn n_obs(&self) -> usize {
        self.factor.factors.nrows()
    }

    /// Named scalar measures in a fixed order: `swc`, `swc_mkt`, `swc_ids`,
    /// then `swc_band:<name>`, `swc_mkt_band:<name>`, `swc_ids_band:<name>`
    /// for each band.
    pub fn measures(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("swc".to_string(), self.table.swc),
            ("swc_mkt".to_string(), self.table.swc_mkt),
            ("swc_ids".to_string(), self.table.swc_ids),
        ];
        if let Some(spec) = &self.spectral {
            for b in &spec.bands {
                out.push((format!("swc_band:{}", b.band.name), b.measures.swc));
                out.push((format!("swc_mkt_band:{}", b.band.name), b.measures.swc_mkt));
                out.push((format!("swc_ids_band:{}", b.band.name), b.measures.swc_ids));
            }
        }
        out
    }
}

/// Plug-in or alternative estimates of the idiosyncratic MA matrices.
pub type IdioMa<'a> =
    &'a (dyn Fn(&SparseVarFit, &DMatrix<f64>, usize) -> Result<Vec<DMatrix<f64>>> + Sync);

/// A validated configuration with its strategies resolved.
pub struct Estimator {
    cfg: EstimationConfig,
    threshold: Box<dyn Threshold>,
    spectral: Option<SpectralTools>,
}

impl Estimator {
    pub fn new(cfg: EstimationConfig) -> Result<Self> {
        if cfg.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        cfg.lasso.validate()?;
        cfg.glasso.validate()?;
        cfg.rho_grid.validate()?;
        if !(cfg.threshold.lambda >= 0.0) || !cfg.threshold.lambda.is_finite() {
            return Err(Error::InvalidParameter(
                "threshold lambda must be finite and >= 0".into(),
            ));
        }
        let threshold = threshold::registry().build(&cfg.threshold.rule)?;
        let spectral = match &cfg.spectral {
            s if !s.enabled => None,
            s => {
                validate_partition(&s.bands)?;
                if s.ma_terms == 0 {
                    return Err(Error::InvalidParameter("ma_terms must be >= 1".into()));
                }
                if let Bandwidth::Fixed { lags: 0 } = s.bandwidth {
                    return Err(Error::InvalidParameter("bandwidth must be >= 1".into()));
                }
                Some(SpectralTools {
                    window: kernel::registry().build(&s.kernel)?,
                    aggregation: aggregation::registry().build(&s.aggregation)?,
                    grid: FrequencyGrid::midpoint(s.grid_points)?,
                })
            }
        };
        Ok(Estimator {
            cfg,
            threshold,
            spectral,
        })
    }

    pub fn config(&self) -> &EstimationConfig {
        &self.cfg
    }

    pub fn has_spectral(&self) -> bool {
        self.spectral.is_some()
    }

    /// Information-criterion order selection on the demeaned panel.
    pub fn select_order(&self, x: &DMatrix<f64>, bounds: OrderBounds) -> Result<OrderSelection> {
        select_model_order(&demean_columns(x), bounds, &self.cfg.lasso)
    }

    /// Estimate every measure on a `T × N` window. Columns are demeaned first.
    pub fn estimate(&self, x: &DMatrix<f64>, order: ModelOrder) -> Result<WindowEstimate> {
        self.estimate_with(x, order, PenaltyChoice::Select, None, true)
    }

    /// [`Estimator::estimate`] with a given precision penalty, optional
    /// replacement MA matrices for the time-domain decomposition, and the
    /// spectral measures optionally skipped.
    pub fn estimate_with(
        &self,
        x: &DMatrix<f64>,
        order: ModelOrder,
        penalty: PenaltyChoice,
        idio_ma: Option<IdioMa<'_>>,
        spectral: bool,
    ) -> Result<WindowEstimate> {
        let x = demean_columns(x);
        let factor = fit_factor_model(&x, order.r, order.p_f)?;
        let sparse = fit_sparse_var(&factor.idio_panel, order.p_xi, &self.cfg.lasso)?;
        let precision = match penalty {
            PenaltyChoice::Select => {
                select_glasso_penalty(&sparse.residuals, &self.cfg.rho_grid, &self.cfg.glasso)?
                    .precision
            }
            PenaltyChoice::Fixed(rho) => {
                graphical_lasso(&sample_covariance(&sparse.residuals), rho, &self.cfg.glasso)?
            }
        };
        let thresholded = apply_threshold(
            &sparse.coeffs,
            self.cfg.threshold.lambda,
            self.threshold.as_ref(),
        )?;

        let h = self.cfg.horizon;
        let rep = match idio_ma {
            None => JointMaRepresentation::new(
                &factor.loadings,
                &factor.factor_var_coeffs,
                &sparse.coeffs,
                &factor.factor_resid_cov,
                &sparse.resid_cov,
                h,
            )?,
            Some(ma) => JointMaRepresentation::from_ma(
                &factor.loadings,
                crate::connectedness::var_to_ma(&factor.factor_var_coeffs, order.r, h),
                ma(&sparse, &factor.idio_panel, h)?,
                &factor.factor_resid_cov,
                &sparse.resid_cov,
            )?,
        };
        let table = connectedness_table(&gfevd(&rep)?, order.r, h)?;

        let spectral = match (&self.spectral, spectral) {
            (Some(tools), true) => Some(self.spectral_measures(
                tools,
                &self.cfg.spectral,
                &factor,
                &thresholded,
                &precision,
            )?),
            _ => None,
        };
        Ok(WindowEstimate {
            order,
            factor,
            sparse,
            idio_coeffs_thresholded: thresholded,
            precision,
            table,
            spectral,
        })
    }

    fn spectral_measures(
        &self,
        tools: &SpectralTools,
        sc: &SpectralConfig,
        factor: &FactorModelFit,
        thresholded: &[DMatrix<f64>],
        precision: &RegularizedPrecision,
    ) -> Result<SpectralConnectedness> {
        let t = factor.factors.nrows();
        let bandwidth = sc.bandwidth.resolve(t)?;
        let mut ff = crate::spectral::factor_spectrum_kernel(
            &factor.factors,
            tools.window.as_ref(),
            bandwidth,
            &tools.grid,
        )?;
        scale_spectrum(&mut ff, 2.0 * PI);
        let power = panel_power(
            &factor.loadings,
            &ff,
            thresholded,
            &precision.precision,
            &tools.grid,
        )?;
        let rep = JointMaRepresentation::new(
            &factor.loadings,
            &factor.factor_var_coeffs,
            thresholded,
            &factor.factor_resid_cov,
            &precision.covariance,
            sc.ma_terms,
        )?;
        let fevd = band_fevd(&rep, &power, &tools.grid, &sc.bands)?;
        spectral_connectedness(&fevd, factor.n_factors(), tools.aggregation.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::FactorModelDgp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn panel(t: usize, seed: u64) -> DMatrix<f64> {
        let n = 6;
        let dgp = FactorModelDgp {
            loadings: DMatrix::from_fn(n, 1, |i, _| 1.0 + 0.1 * i as f64),
            factor_coeffs: vec![DMatrix::from_element(1, 1, 0.5)],
            factor_cov: DMatrix::identity(1, 1),
            idio_coeffs: vec![DMatrix::from_diagonal_element(n, n, 0.3)],
            idio_cov: DMatrix::identity(n, n),
        };
        dgp.simulate(t, 200, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
            .x
    }

    #[test]
    fn estimate_produces_consistent_measures() {
        let est = Estimator::new(EstimationConfig::default()).unwrap();
        let x = panel(300, 1);
        let w = est.estimate(&x, ModelOrder::new(1, 1, 1).unwrap()).unwrap();
        let m = w.measures();
        assert_eq!(m.len(), 3 + 3 * 3);
        assert_eq!(m[0].0, "swc");
        assert!((w.table.swc - w.table.swc_mkt - w.table.swc_ids).abs() < 1e-12);
        let spec = w.spectral.as_ref().unwrap();
        let total: f64 = spec.bands.iter().map(|b| b.measures.swc).sum();
        assert!((total - spec.total.swc).abs() < 1e-12);
        // common shocks dominate this panel
        assert!(w.table.swc_mkt > w.table.swc_ids);
        assert_eq!(w.n_obs(), 300);
    }

    #[test]
    fn estimation_is_deterministic_and_mean_invariant() {
        let est = Estimator::new(EstimationConfig::default()).unwrap();
        let x = panel(200, 2);
        let shifted = x.map(|v| v + 3.0);
        let order = ModelOrder::new(1, 2, 1).unwrap();
        let a = est.estimate(&x, order).unwrap();
        let b = est.estimate(&x, order).unwrap();
        assert_eq!(a.measures(), b.measures());
        let c = est.estimate(&shifted, order).unwrap();
        for ((_, u), (_, v)) in a.measures().iter().zip(c.measures()) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn spectral_can_be_disabled() {
        let mut cfg = EstimationConfig::default();
        cfg.spectral.enabled = false;
        let est = Estimator::new(cfg).unwrap();
        let w = est
            .estimate(&panel(200, 3), ModelOrder::new(1, 1, 1).unwrap())
            .unwrap();
        assert!(w.spectral.is_none());
        assert_eq!(w.measures().len(), 3);
    }

    #[test]
    fn fixed_penalty_matches_selected_penalty() {
        let est = Estimator::new(EstimationConfig::default()).unwrap();
        let x = panel(250, 4);
        let order = ModelOrder::new(1, 1, 1).unwrap();
        let a = est.estimate(&x, order).unwrap();
        let b = est
            .estimate_with(
                &x,
                order,
                PenaltyChoice::Fixed(a.precision.penalty),
                None,
                true,
            )
            .unwrap();
        assert_eq!(a.measures(), b.measures());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = EstimationConfig::default();
        cfg.horizon = 0;
        assert!(Estimator::new(cfg).is_err());
        let mut cfg = EstimationConfig::default();
        cfg.spectral.kernel = StrategySpec::named("boxcar");
        assert!(matches!(
            Estimator::new(cfg),
            Err(Error::UnknownStrategy { .. })
        ));
        let mut cfg = EstimationConfig::default();
        cfg.spectral.bands.pop();
        assert!(Estimator::new(cfg).is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = EstimationConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: EstimationConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        let partial: EstimationConfig = serde_json::from_str(r#"{"horizon": 5}"#).unwrap();
        assert_eq!(partial.horizon, 5);
        assert!(serde_json::from_str::<EstimationConfig>(r#"{"horizen": 5}"#).is_err());
    }
}
