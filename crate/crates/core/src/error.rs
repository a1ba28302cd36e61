use thiserror::Error;

/// Errors raised by model construction, estimation and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MecmError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid ranks ({r1}, {r2}) for a {n1}x{n2} series: need 1 <= r1 <= n1 and 1 <= r2 <= n2")]
    InvalidRank {
        r1: usize,
        r2: usize,
        n1: usize,
        n2: usize,
    },

    #[error("series of length {t} is too short: at least {required} observations required")]
    InsufficientSample { t: usize, required: usize },

    #[error("{0} is not symmetric positive definite")]
    NotPositiveDefinite(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("top {size}x{size} block of {factor} is singular; reorder the series so the leading block is invertible")]
    SingularTopBlock { factor: &'static str, size: usize },

    #[error("least-squares regressors are degenerate (condition number {condition:.3e})")]
    DegenerateRegressors { condition: f64 },

    #[error("log-likelihood became non-finite while updating {block} at iteration {iteration}")]
    Estimation { block: String, iteration: usize },

    #[error("no stable DGP found after {attempts} attempts (best spectral radius {best_radius:.4})")]
    UnstableDgp { attempts: usize, best_radius: f64 },

    #[error("companion matrix is not stable (spectral radius {0:.6})")]
    UnstableCompanion(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, MecmError>;
