//! Gaussian-process regression.
//!
//! Exact GP regression with ARD kernels, a first-class prior-mean function,
//! Cholesky factorization with jitter escalation, the log marginal likelihood
//! with its analytic gradient, and multistart hyperparameter fitting.

mod hyper;
mod kernel;
mod linalg;
mod model;

pub use hyper::{
    optimize_hyperparams, optimize_shared_hyperparams, HyperBounds, HyperOptConfig, HyperOptResult,
    SharedHyperOptResult,
};
pub use kernel::{kernel_eval, KernelSpec, KernelVariant};
pub use model::{GpModel, Prediction, PriorMean, ScalarFn, JITTER_MAX, JITTER_START};
