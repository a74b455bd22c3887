//! Large-deviation toolkit for the damped stochastic nonlinear wave equation
//! `u_tt + gamma u_t - u_xx + f(u) = h + sqrt(eps) sum_j b_j dbeta_j/dt e_j`
//! on an interval with Dirichlet conditions.
//!
//! The crate covers the deterministic dynamics (equilibria, stability,
//! feedback control), quasipotentials by a minimum-action shooting method,
//! the chain-graph rate function, and Monte Carlo estimators whose
//! exponential scaling in `eps` is compared against that rate function.

pub mod action;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod harness;
pub mod spectral;
pub mod stats;
pub mod stochastic;

pub use control::{action_j, ControlPath};
pub use error::{Error, Result};
pub use spectral::{energy, norm_htheta, project, NoiseSpec, SpectralBasis, State};
