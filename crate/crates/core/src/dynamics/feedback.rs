use serde::{Deserialize, Serialize};

use super::stepper::{Integrator, Trajectory};
use super::ModelConfig;
use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::spectral::State;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackOptions {
    pub dt: f64,
    /// Slack factor on the decay bound `|v(t) - u|^2 <= e^{-alpha t} |v(0) - u|^2`.
    pub decay_factor: f64,
    pub initial_modes: usize,
    /// Relative slack on the endpoint radius `rho2 / 2`.
    pub endpoint_tol: f64,
}

impl Default for FeedbackOptions {
    fn default() -> Self {
        Self {
            dt: 0.01,
            decay_factor: 1.05,
            initial_modes: 4,
            endpoint_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackAttempt {
    pub n_modes: usize,
    pub passed: bool,
    pub max_ratio: f64,
    /// First grid time where the decay bound failed.
    pub violation_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResult {
    /// Realized open-loop control, one interval per integration step.
    pub control: ControlPath,
    pub trajectory: Trajectory,
    pub n_modes: usize,
    pub horizon: f64,
    /// The nominal horizon was lengthened to reach `rho2 / 2`.
    pub extended: bool,
    /// `max_t |v(t)-u|^2 / (e^{-alpha t} |v(0)-u|^2)`.
    pub max_decay_ratio: f64,
    pub endpoint_distance: f64,
    pub endpoint_ok: bool,
    /// `sup_t |v(t)|_H` together with `|u|_H` (the realized bound on both trajectories).
    pub sup_norm: f64,
    pub attempts: Vec<FeedbackAttempt>,
}

struct Run {
    control: ControlPath,
    trajectory: Trajectory,
    max_ratio: f64,
    violation_time: Option<f64>,
    sup_norm: f64,
}

fn closed_loop(
    cfg: &ModelConfig,
    v0: &State,
    target: &State,
    n_ctrl: usize,
    horizon: f64,
    opts: &FeedbackOptions,
) -> Result<Run> {
    let n_steps = ((horizon / opts.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let h = horizon / n_steps as f64;
    let mut it = Integrator::new(cfg, h)?;
    let target_f = cfg.nonlinear_term(&target.position);
    let basis = cfg.basis();
    let alpha = cfg.alpha();
    let d0 = basis.distance_h(v0, target, alpha).powi(2);
    let target_norm_sq = basis.distance_h(target, &State::zeros(target.n_modes()), alpha).powi(2);
    let mut s = v0.clone();
    let mut coeffs = Vec::with_capacity(n_steps * n_ctrl);
    let mut times = vec![0.0];
    let mut states = vec![s.clone()];
    let mut max_ratio: f64 = 0.0;
    let mut violation_time = None;
    let mut sup_norm = basis.distance_h(v0, &State::zeros(v0.n_modes()), alpha);
    let mut phi = vec![0.0; n_ctrl];
    for k in 1..=n_steps {
        let fv = it.nonlinear_term(&s.position);
        for j in 0..n_ctrl {
            phi[j] = fv[j] - target_f[j];
        }
        coeffs.extend_from_slice(&phi);
        it.set_control(&phi);
        it.step(&mut s);
        let t = k as f64 * h;
        it.check(&s, t)?;
        let d = basis.distance_h(&s, target, alpha).powi(2);
        let bound = (-alpha * t).exp() * d0;
        // distances at round-off level count as zero
        let d = if d < 1e-24 * (1.0 + target_norm_sq) { 0.0 } else { d };
        let ratio = if bound > 0.0 {
            d / bound
        } else if d > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        max_ratio = max_ratio.max(ratio);
        if ratio > opts.decay_factor && violation_time.is_none() {
            violation_time = Some(t);
        }
        sup_norm = sup_norm.max(basis.distance_h(&s, &State::zeros(s.n_modes()), alpha));
        times.push(t);
        states.push(s.clone());
    }
    Ok(Run {
        control: ControlPath::new(horizon, n_steps, n_ctrl, coeffs)?,
        trajectory: Trajectory { times, states },
        max_ratio,
        violation_time,
        sup_norm,
    })
}

/// Steer `v0` from `B(u, rho1)` into `B(u, rho2 / 2)` with the projected
/// feedback `phi = P_N [f(v) - f(u)]`, escalating `N` until the decay bound holds.
pub fn feedback_control(
    v0: &State,
    target: &State,
    rho1: f64,
    rho2: f64,
    cfg: &ModelConfig,
    opts: &FeedbackOptions,
) -> Result<FeedbackResult> {
    v0.check_len(cfg.n_modes())?;
    target.check_len(cfg.n_modes())?;
    if !(rho1 > 0.0 && rho2 > 0.0 && rho2 < rho1) {
        return Err(Error::InvalidArgument(format!("need 0 < rho2 < rho1, got {rho2}, {rho1}")));
    }
    let alpha = cfg.alpha();
    let d0 = cfg.basis().distance_h(v0, target, alpha);
    if d0 > rho1 * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "start is at distance {d0} > rho1 = {rho1} from the target"
        )));
    }
    let nominal = 2.0 * (rho1.ln() - rho2.ln()) / alpha;
    let n_max = cfg.n_modes();
    let mut n = opts.initial_modes.clamp(1, n_max);
    let mut attempts = Vec::new();
    loop {
        let run = closed_loop(cfg, v0, target, n, nominal, opts)?;
        let passed = run.violation_time.is_none();
        attempts.push(FeedbackAttempt {
            n_modes: n,
            passed,
            max_ratio: run.max_ratio,
            violation_time: run.violation_time,
        });
        if passed {
            let mut run = run;
            let mut horizon = nominal;
            let mut extended = false;
            let goal = 0.5 * rho2 * (1.0 + opts.endpoint_tol);
            let mut end = cfg.basis().distance_h(run.trajectory.last(), target, alpha);
            if end > goal {
                // the nominal horizon only guarantees rho2; one more halving of the radius
                horizon = nominal + 2.0 * std::f64::consts::LN_2 / alpha;
                extended = true;
                run = closed_loop(cfg, v0, target, n, horizon, opts)?;
                end = cfg.basis().distance_h(run.trajectory.last(), target, alpha);
                if run.violation_time.is_some() {
                    return Err(Error::DecayViolated {
                        n_modes: n,
                        t: run.violation_time.unwrap_or(horizon),
                        ratio: run.max_ratio,
                    });
                }
            }
            return Ok(FeedbackResult {
                control: run.control,
                trajectory: run.trajectory,
                n_modes: n,
                horizon,
                extended,
                max_decay_ratio: run.max_ratio,
                endpoint_distance: end,
                endpoint_ok: end <= goal,
                sup_norm: run.sup_norm,
                attempts,
            });
        }
        if n == n_max {
            return Err(Error::DecayViolated {
                n_modes: n,
                t: run.violation_time.unwrap_or(nominal),
                ratio: run.max_ratio,
            });
        }
        n = (2 * n).min(n_max);
    }
}
