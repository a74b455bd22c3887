use serde::{Deserialize, Serialize};

use super::stepper::{flow_controlled, steps_per_interval};
use super::ModelConfig;
use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::spectral::State;

/// Smallest constant `C` with `|S^phi(t) - S(t)|^2 <= C int_0^t ||phi||^2 e^{Cs} ds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationFit {
    pub constant: f64,
    pub per_control: Vec<f64>,
}

struct Profile {
    dist_sq: Vec<f64>,
    l2: Vec<f64>,
    h: f64,
}

fn profile(cfg: &ModelConfig, s0: &State, phi: &ControlPath, dt: f64) -> Result<Profile> {
    let zero = ControlPath::zeros(phi.horizon(), phi.n_intervals(), phi.n_modes())?;
    let k = steps_per_interval(phi, dt)?;
    let a = flow_controlled(cfg, s0, phi, dt)?;
    let b = flow_controlled(cfg, s0, &zero, dt)?;
    let dist_sq = (1..=phi.n_intervals())
        .map(|i| cfg.basis().distance_h(&a.states[i * k], &b.states[i * k], cfg.alpha()).powi(2))
        .collect();
    let l2 = (0..phi.n_intervals())
        .map(|i| phi.interval(i).iter().map(|x| x * x).sum())
        .collect();
    Ok(Profile {
        dist_sq,
        l2,
        h: phi.interval_length(),
    })
}

fn satisfied(p: &Profile, c: f64) -> bool {
    let mut acc = 0.0;
    for (i, (&d, &q)) in p.dist_sq.iter().zip(&p.l2).enumerate() {
        let (t0, t1) = (i as f64 * p.h, (i + 1) as f64 * p.h);
        acc += q * ((c * t1).exp() - (c * t0).exp()) / c;
        if d > c * acc * (1.0 + 1e-12) {
            return false;
        }
    }
    true
}

fn minimal_constant(p: &Profile) -> Result<f64> {
    let (mut lo, mut hi) = (1e-8f64, 1e3f64);
    if satisfied(p, lo) {
        return Ok(lo);
    }
    if !satisfied(p, hi) {
        return Err(Error::Range("perturbation constant exceeds 1e3".into()));
    }
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if satisfied(p, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo < 1.0 + 1e-10 {
            break;
        }
    }
    Ok(hi)
}

/// Fit the perturbation constant over a family of controls started from `s0`.
pub fn fit_perturbation_constant(
    cfg: &ModelConfig,
    s0: &State,
    controls: &[ControlPath],
    dt: f64,
) -> Result<PerturbationFit> {
    let per_control = controls
        .iter()
        .map(|phi| profile(cfg, s0, phi, dt).and_then(|p| minimal_constant(&p)))
        .collect::<Result<Vec<f64>>>()?;
    let constant = per_control.iter().copied().fold(0.0, f64::max);
    Ok(PerturbationFit { constant, per_control })
}

/// Whether the bound with constant `c` holds for `phi` at every interval end.
pub fn perturbation_bound_holds(cfg: &ModelConfig, s0: &State, phi: &ControlPath, dt: f64, c: f64) -> Result<bool> {
    Ok(satisfied(&profile(cfg, s0, phi, dt)?, c))
}
