use thiserror::Error;

/// Errors produced anywhere in the estimation stack.
#[derive(Debug, Error)]
pub enum Error {
    /// A price or value outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Series could not be aligned into a panel.
    #[error("panel assembly failed: {0}")]
    Assembly(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A matrix that must be inverted or factorized is singular.
    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("matrix in {0} is not positive semidefinite")]
    NotPsd(&'static str),

    /// Coordinate descent hit `max_iter` sweeps.
    #[error("lasso did not converge at lambda={lambda:e}: max KKT violation {kkt_violation:e}")]
    LassoNonConvergence { lambda: f64, kkt_violation: f64 },

    #[error("graphical lasso did not converge at rho={rho:e}: duality gap {gap:e}")]
    GlassoNonConvergence { rho: f64, gap: f64 },

    /// A shock with zero (or negative) variance cannot be normalized.
    #[error("degenerate shock {0}: non-positive variance")]
    DegenerateShock(usize),

    #[error("series {0} has zero forecast error variance")]
    ZeroVariance(usize),

    #[error("series {series} has zero spectral power at omega={omega}")]
    ZeroSpectrum { series: usize, omega: f64 },

    #[error("quadrature mismatch: {0}")]
    Quadrature(String),

    #[error("unknown {kind} '{name}' (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("bootstrap aborted: {failed} of {total} replications failed")]
    BootstrapAborted { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
