//! Deterministic and controlled flows of the damped nonlinear wave equation
//! in a Galerkin truncation, its equilibria and their stability, and the
//! projected feedback control steering a state into a small ball.

mod config;
mod equilibria;
mod feedback;
mod perturbation;
mod scan;
mod stability;
mod stepper;

pub use config::{
    validate_nonlinearity, ModelConfig, ModelParams, NoiseParams, NonlinearityReport, NonlinearitySpec, Polynomial,
    DEFAULT_CEILING, DOUBLE_WELL_NOISE_SCALE,
};
pub use equilibria::{default_seeds, find_equilibria, find_equilibria_with, newton, Equilibrium, EquilibriumSet, NewtonOptions};
pub use feedback::{feedback_control, FeedbackAttempt, FeedbackOptions, FeedbackResult};
pub use perturbation::{fit_perturbation_constant, perturbation_bound_holds, PerturbationFit};
pub use scan::{heteroclinic_scan, Connection, ScanOptions};
pub use stability::{characteristic_roots, classify_stability, Spectrum, Stability, STABILITY_TOL};
pub use stepper::{
    flow_controlled, flow_deterministic, oscillator_noise_covariance, oscillator_propagator, steps_per_interval,
    Integrator, Trajectory, STABILITY_LIMIT,
};
pub(crate) use stepper::ModeStep;
