use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unbounded basis: density {density:.3e} below floor {floor:.3e} at r = {r:.6}")]
    UnboundedBasis { r: f64, density: f64, floor: f64 },

    #[error("dependent seeds: seed {index} has residual norm {norm:.3e} after orthogonalization")]
    DependentSeeds { index: usize, norm: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported measure: {0}")]
    UnsupportedMeasure(String),

    #[error("construction infeasible: {reason} (largest feasible count {max_feasible})")]
    Infeasible { reason: String, max_feasible: usize },

    #[error("codebook search exhausted after {tries} candidates: {found} of {needed} codewords")]
    RetryExceeded { tries: u64, found: usize, needed: usize },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
