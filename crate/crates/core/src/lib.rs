//! EM, Gibbs and variational Bayes for the AR(1)-plus-noise model
//!
//! `y_t = x_t + ε_t`, `x_{t+1} − μ = φ(x_t − μ) + η_t`,
//!
//! fitted through partially noncentered augmentations
//! `α_t = σ_η^{−a}(x_t − w_t μ)`. All matrix work is tridiagonal and O(n).

pub mod em;
pub mod cli;
pub mod error;
pub mod gibbs;
pub mod model;
pub mod tridiag;
pub mod vb;
pub mod workparam;

#[cfg(test)]
#[path = "../tests/common/oracle.rs"]
mod oracle;

pub use em::{algorithm1, algorithm2, algorithm3, default_init, FitOptions, FitReport, Scheme, Termination};
pub use error::{Error, Result};
pub use model::{log_likelihood, simulate, ModelParams, Parametrization, TimeSeries};
