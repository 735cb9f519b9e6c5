use std::fmt;

/// Errors raised while assembling, solving or analysing a network.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("network failed validation: {0}")]
    Validation(ValidationErrors),

    #[error("no stationary state: drift is not stable (margin {margin:.3e})")]
    Unstable { margin: f64 },

    /// No stabilizing Riccati solution exists at this bias value.
    #[error("s = {s} lies outside the domain of the stabilizing branch ({reason})")]
    DomainBoundary { s: f64, reason: String },

    #[error("no bias value around s = 0 admits a stabilizing solution")]
    DomainEmpty,

    #[error("stencil of width {needed:.3e} does not fit inside the domain ({lo:.6e}, {hi:.6e})")]
    DomainTooNarrow { needed: f64, lo: f64, hi: f64 },

    #[error("{what} did not converge after {iterations} iterations (last estimate {estimate:.6e}, residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        estimate: f64,
        residual: f64,
    },

    #[error("integration diverged at t = {t:.4e}")]
    Divergence { t: f64 },

    #[error("truncated generator of dimension {dim} needs about {bytes} bytes; refusing ({reason})")]
    OracleResource {
        dim: usize,
        bytes: usize,
        reason: String,
    },

    #[error("{0}")]
    Undefined(String),

    #[error("linear algebra failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every violation found by [`crate::model::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationErrors(pub Vec<String>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("; "))
    }
}
