//! Multilevel Markov chain Monte Carlo for Bayesian inversion of a lognormal
//! Darcy flow model.
//!
//! The crate is organised bottom-up:
//!
//! * [`random_field`]: Karhunen–Loève basis of the exponential covariance on
//!   the unit square and realisations of `log k`.
//! * [`darcy`]: P1 finite elements for `-div(k grad p) = f` with the flow
//!   boundary conditions, point observations and the outflow flux.
//! * [`posterior`]: level-dependent prior, likelihood and cached posterior
//!   evaluations, plus synthetic data generation.
//! * [`samplers`]: pCN proposals, single-level Metropolis–Hastings and the
//!   coupled two-level step that produces samples of `Q_l - Q_{l-1}`.
//! * [`estimator`]: level hierarchy, Gelman–Rubin variances, sample
//!   allocation, the adaptive telescoping estimator and its diagnostics.
//! * [`harness`]: experiment configuration, output formats, verification
//!   oracles and the acceptance checks used by `mlmcmc selftest`.

pub mod darcy;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod posterior;
pub mod random_field;
pub mod rng;
pub mod samplers;

pub use error::{Error, Result};
