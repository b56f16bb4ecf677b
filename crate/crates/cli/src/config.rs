//! Run configuration: TOML document, defaults, and validation.

use std::fmt;
use std::path::PathBuf;

use factor_connect::bootstrap::{ma_registry, BootstrapConfig};
use factor_connect::factor::{ModelOrder, OrderBounds};
use factor_connect::ingest::{InputKind, VolatilityTransform};
use factor_connect::pipeline::{EstimationConfig, SpectralConfig, ThresholdConfig};
use factor_connect::precision::{GlassoConfig, RhoGrid};
use factor_connect::registry::StrategySpec;
use factor_connect::sparsevar::{threshold, LassoConfig};
use factor_connect::spectral::{aggregation, kernel, validate_partition, Bandwidth};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How the model order is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum OrderMode {
    Fixed {
        r: usize,
        p_f: usize,
        p_xi: usize,
    },
    /// Information-criterion search, once on the full panel or in every window.
    Select {
        r_max: usize,
        pf_max: usize,
        pxi_max: usize,
        scope: SelectionScope,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionScope {
    Global,
    Window,
}

impl Default for OrderMode {
    fn default() -> Self {
        OrderMode::Fixed {
            r: 1,
            p_f: 2,
            p_xi: 4,
        }
    }
}

impl OrderMode {
    pub fn bounds(&self) -> Option<OrderBounds> {
        match *self {
            OrderMode::Fixed { .. } => None,
            OrderMode::Select {
                r_max,
                pf_max,
                pxi_max,
                ..
            } => Some(OrderBounds {
                r_max,
                pf_max,
                pxi_max,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub enabled: bool,
    pub replications: usize,
    pub burn_in: usize,
    pub confidence: f64,
    pub ma_estimator: StrategySpec,
    pub max_failure_rate: f64,
    pub spectral: bool,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        let b = BootstrapConfig::default();
        BootstrapSection {
            enabled: true,
            replications: b.replications,
            burn_in: b.burn_in,
            confidence: b.confidence,
            ma_estimator: b.ma_estimator,
            max_failure_rate: b.max_failure_rate,
            spectral: b.spectral,
        }
    }
}

/// A complete, validated run description. Every field has a default except
/// `input`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub input_kind: InputKind,
    pub transform: VolatilityTransform,
    pub output_dir: PathBuf,
    /// Also write the full connectedness table of every window.
    pub pairwise: bool,
    pub window_length: usize,
    pub step: usize,
    pub seed: u64,
    pub order: OrderMode,
    pub horizon: usize,
    pub lasso: LassoConfig,
    pub glasso: GlassoConfig,
    pub rho_grid: RhoGrid,
    pub threshold: ThresholdConfig,
    pub spectral: SpectralConfig,
    pub bootstrap: BootstrapSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: PathBuf::new(),
            input_kind: InputKind::Ohlc,
            transform: VolatilityTransform::Raw,
            output_dir: PathBuf::from("out"),
            pairwise: false,
            window_length: 150,
            step: 1,
            seed: 0,
            order: OrderMode::default(),
            horizon: 10,
            lasso: LassoConfig::default(),
            glasso: GlassoConfig::default(),
            rho_grid: RhoGrid::default(),
            threshold: ThresholdConfig::default(),
            spectral: SpectralConfig::default(),
            bootstrap: BootstrapSection::default(),
        }
    }
}

impl RunConfig {
    pub fn estimation(&self) -> EstimationConfig {
        EstimationConfig {
            horizon: self.horizon,
            lasso: self.lasso.clone(),
            glasso: self.glasso,
            rho_grid: self.rho_grid.clone(),
            threshold: self.threshold.clone(),
            spectral: self.spectral.clone(),
        }
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        let b = &self.bootstrap;
        BootstrapConfig {
            replications: b.replications,
            burn_in: b.burn_in,
            confidence: b.confidence,
            seed: self.seed,
            ma_estimator: b.ma_estimator.clone(),
            max_failure_rate: b.max_failure_rate,
            spectral: b.spectral,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config is not valid {format}: {message}")]
    Syntax {
        format: &'static str,
        message: String,
    },
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
}

impl ConfigError {
    pub fn fields(&self) -> &[FieldError] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

/// Parse a TOML config, or a `manifest.json` written by an earlier run (its
/// `config` entry is used).
pub fn parse_document(text: &str, json: bool) -> Result<toml::Table, ConfigError> {
    if json {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
                format: "JSON",
                message: e.to_string(),
            })?;
        let config = value.get("config").cloned().unwrap_or(value);
        serde_json::from_value(config).map_err(|e| ConfigError::Syntax {
            format: "JSON",
            message: e.to_string(),
        })
    } else {
        text.parse::<toml::Table>()
            .map_err(|e| ConfigError::Syntax {
                format: "TOML",
                message: e.to_string(),
            })
    }
}

fn take<T: DeserializeOwned>(
    doc: &mut toml::Table,
    key: &str,
    slot: &mut T,
    errors: &mut Vec<FieldError>,
) {
    let Some(value) = doc.remove(key) else {
        return;
    };
    match serde_path_to_error::deserialize::<_, T>(value) {
        Ok(v) => *slot = v,
        Err(e) => {
            let inner = e.path().to_string();
            let path = if inner.is_empty() || inner == "." {
                key.to_string()
            } else {
                format!("{key}.{inner}")
            };
            errors.push(FieldError {
                path,
                message: e.into_inner().to_string(),
            });
        }
    }
}

/// Build a [`RunConfig`] from a parsed document, injecting defaults and
/// collecting every error with its field path.
pub fn validate_config(mut doc: toml::Table) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut errors = Vec::new();
    let e = &mut errors;
    take(&mut doc, "input", &mut cfg.input, e);
    take(&mut doc, "input_kind", &mut cfg.input_kind, e);
    take(&mut doc, "transform", &mut cfg.transform, e);
    take(&mut doc, "output_dir", &mut cfg.output_dir, e);
    take(&mut doc, "pairwise", &mut cfg.pairwise, e);
    take(&mut doc, "window_length", &mut cfg.window_length, e);
    take(&mut doc, "step", &mut cfg.step, e);
    take(&mut doc, "seed", &mut cfg.seed, e);
    take(&mut doc, "order", &mut cfg.order, e);
    take(&mut doc, "horizon", &mut cfg.horizon, e);
    take(&mut doc, "lasso", &mut cfg.lasso, e);
    take(&mut doc, "glasso", &mut cfg.glasso, e);
    take(&mut doc, "rho_grid", &mut cfg.rho_grid, e);
    take(&mut doc, "threshold", &mut cfg.threshold, e);
    take(&mut doc, "spectral", &mut cfg.spectral, e);
    take(&mut doc, "bootstrap", &mut cfg.bootstrap, e);
    for key in doc.keys() {
        e.push(FieldError {
            path: key.clone(),
            message: "unknown field".into(),
        });
    }
    check_semantics(&cfg, e);
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(errors))
    }
}

fn check_semantics(cfg: &RunConfig, errors: &mut Vec<FieldError>) {
    let mut err = |path: &str, message: String| {
        errors.push(FieldError {
            path: path.to_string(),
            message,
        })
    };
    if cfg.input.as_os_str().is_empty() {
        err("input", "required field is missing".into());
    } else if !cfg.input.is_file() {
        err("input", format!("file not found: {}", cfg.input.display()));
    }
    if cfg.window_length == 0 {
        err("window_length", "must be >= 1".into());
    }
    if cfg.step == 0 {
        err("step", "must be >= 1".into());
    }
    if cfg.horizon == 0 {
        err("horizon", "must be >= 1".into());
    }
    match cfg.order {
        OrderMode::Fixed { r, p_f, p_xi } => {
            if let Err(e) = ModelOrder::new(r, p_f, p_xi) {
                err("order", e.to_string());
            }
        }
        OrderMode::Select {
            r_max,
            pf_max,
            pxi_max,
            ..
        } => {
            if r_max == 0 || pf_max == 0 || pxi_max == 0 {
                err("order", "r_max, pf_max and pxi_max must be >= 1".into());
            }
        }
    }
    if cfg
        .order
        .bounds()
        .is_some_and(|b| b.pf_max.max(b.pxi_max) + 2 > cfg.window_length)
    {
        err(
            "order",
            "lag bounds leave too few observations in a window".into(),
        );
    }
    if let Err(e) = cfg.lasso.validate() {
        err("lasso", e.to_string());
    }
    if let Err(e) = cfg.glasso.validate() {
        err("glasso", e.to_string());
    }
    if let Err(e) = cfg.rho_grid.validate() {
        err("rho_grid", e.to_string());
    }
    if let Err(e) = threshold::registry().build(&cfg.threshold.rule) {
        err("threshold.rule", e.to_string());
    }
    if !(cfg.threshold.lambda >= 0.0 && cfg.threshold.lambda.is_finite()) {
        err("threshold.lambda", "must be finite and >= 0".into());
    }
    let s = &cfg.spectral;
    if let Err(e) = kernel::registry().build(&s.kernel) {
        err("spectral.kernel", e.to_string());
    }
    if let Err(e) = aggregation::registry().build(&s.aggregation) {
        err("spectral.aggregation", e.to_string());
    }
    if let Err(e) = validate_partition(&s.bands) {
        err("spectral.bands", e.to_string());
    }
    if s.grid_points == 0 {
        err("spectral.grid_points", "must be >= 1".into());
    }
    if s.ma_terms == 0 {
        err("spectral.ma_terms", "must be >= 1".into());
    }
    if let Bandwidth::Fixed { lags } = s.bandwidth {
        if lags == 0 || lags >= cfg.window_length.max(1) {
            err(
                "spectral.bandwidth",
                format!("lags must satisfy 1 <= lags < window_length, got {lags}"),
            );
        }
    }
    let b = &cfg.bootstrap;
    if b.replications < 2 {
        err("bootstrap.replications", "must be >= 2".into());
    }
    if !(b.confidence > 0.0 && b.confidence < 1.0) {
        err("bootstrap.confidence", "must lie in (0, 1)".into());
    }
    if !(0.0..=1.0).contains(&b.max_failure_rate) {
        err("bootstrap.max_failure_rate", "must lie in [0, 1]".into());
    }
    if let Err(e) = ma_registry().build(&b.ma_estimator) {
        err("bootstrap.ma_estimator", e.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paths(e: ConfigError) -> Vec<String> {
        e.fields().iter().map(|f| f.path.clone()).collect()
    }

    #[test]
    fn empty_document_only_lacks_input() {
        let err = validate_config(toml::Table::new()).unwrap_err();
        assert_eq!(paths(err), vec!["input"]);
    }

    #[test]
    fn errors_are_collected_with_paths() {
        let doc = parse_document(
            r#"
            window_length = 0
            horizon = "ten"
            colour = 1
            [lasso]
            tol = -1.0
            [spectral]
            kernel = { name = "boxcar" }
            "#,
            false,
        )
        .unwrap();
        let p = paths(validate_config(doc).unwrap_err());
        for want in [
            "horizon",
            "colour",
            "input",
            "window_length",
            "lasso",
            "spectral.kernel",
        ] {
            assert!(p.iter().any(|x| x == want), "missing {want} in {p:?}");
        }
    }

    #[test]
    fn overlapping_bands_name_the_pair() {
        let doc = parse_document(
            r#"
            [[spectral.bands]]
            name = "low"
            a = 0.0
            b = 1.0
            [[spectral.bands]]
            name = "high"
            a = 0.5
            b = 3.141592653589793
            "#,
            false,
        )
        .unwrap();
        let err = validate_config(doc).unwrap_err();
        let band = err
            .fields()
            .iter()
            .find(|f| f.path == "spectral.bands")
            .unwrap();
        assert!(band.message.contains("low") && band.message.contains("high"));
    }

    #[test]
    fn nested_type_errors_carry_paths() {
        let doc = parse_document("[bootstrap]\nreplications = -3\n", false).unwrap();
        let p = paths(validate_config(doc).unwrap_err());
        assert!(p.contains(&"bootstrap.replications".to_string()), "{p:?}");
    }

    #[test]
    fn order_modes_parse() {
        let doc = parse_document(
            "[order]\nmode = \"select\"\nr_max = 3\npf_max = 2\npxi_max = 2\nscope = \"global\"\n",
            false,
        )
        .unwrap();
        let err = validate_config(doc).unwrap_err();
        assert_eq!(paths(err), vec!["input"]);
    }

    #[test]
    fn resolved_config_roundtrips_through_json() {
        let cfg = RunConfig {
            input: PathBuf::from("Cargo.toml"),
            ..RunConfig::default()
        };
        let json = serde_json::json!({ "config": serde_json::to_value(&cfg).unwrap() }).to_string();
        let back = validate_config(parse_document(&json, true).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
