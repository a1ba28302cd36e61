//! Matrix error correction models for matrix-valued time series.
//!
//! - [`linalg`]: series container, vec/Kronecker helpers, matrix-normal law.
//! - [`model`]: parameters, identification, parameter counts, likelihood.
//! - [`estimator`]: initialization, analytic gradients, block gradient ascent.
//! - [`selection`]: AIC/BIC rank selection over the full rank grid.
//! - [`dgp`]: random stable DGPs and simulation through the companion form.
//! - [`harness`]: Monte Carlo rank-recovery experiments.

pub mod dgp;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod selection;

pub use error::{MecmError, Result};
pub use estimator::{fit, gradients, initialize, FitOptions, FitResult, StepControl, StepRule};
pub use linalg::{kron, matnorm_logpdf, matnorm_sample, unvec, vec, MatNormSpec, MatrixSeries};
pub use model::{
    effective_params, log_likelihood, normalize_identification, residuals, to_vecm,
    vecm_param_count, MecmParams, RankPair, VecmForm,
};
pub use selection::{information_criteria, select_ranks, Criterion, SelectionReport};
