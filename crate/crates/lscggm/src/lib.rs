//! Latent-variable sparse conditional Gaussian graphical models.
//!
//! Estimates, for outputs X conditioned on inputs Z, a precision structure
//! decomposed into a sparse component S and a low-rank component L by
//! minimising a penalised negative conditional log-likelihood under the
//! constraints `S_X − L_X ≻ 0`, `L_X ⪰ 0`. The crate also ships the
//! machinery around the estimator: an ADMM solver with an iterative inner
//! proximal step, synthetic benchmark generation, recovery metrics,
//! identifiability diagnostics, complementary-pairs stability selection and
//! a sparse SDP exporter for external verification.

pub mod diagnostics;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod sdp;
pub mod simulate;
pub mod solver;
pub mod stability;

pub use error::{Error, Result};
pub use model::{
    neg_log_likelihood, nll_gradient, objective, sample_covariances, CovarianceTriple,
    DecomposedParams, GroundTruthModel, MarginalParams, Parametrisation, PenaltyConfig,
};
pub use solver::{fit, fit_with_state, FitMode, FitResult, SolverOptions};
