use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::stability::{classify_stability, Spectrum, Stability};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::spectral::State;

/// One stationary point `[u, 0]` of the deterministic flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub state: State,
    pub stability: Stability,
    pub spectrum: Spectrum,
    /// Euclidean norm of the modal residual.
    pub residual: f64,
    /// Jacobian singular at the root.
    pub degenerate: bool,
    /// Residual norms of the final Newton run (convergence certificate).
    pub newton_residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSet {
    pub equilibria: Vec<Equilibrium>,
}

impl EquilibriumSet {
    pub fn len(&self) -> usize {
        self.equilibria.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equilibria.is_empty()
    }

    pub fn states(&self) -> Vec<State> {
        self.equilibria.iter().map(|e| e.state.clone()).collect()
    }

    pub fn stable_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.equilibria[i].stability == Stability::Stable)
            .collect()
    }

    /// Index of the equilibrium nearest to `s` in the H-norm.
    pub fn nearest(&self, cfg: &ModelConfig, s: &State) -> Option<(usize, f64)> {
        self.equilibria
            .iter()
            .enumerate()
            .map(|(i, e)| (i, cfg.basis().distance_h(&e.state, s, cfg.alpha())))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub dedup_distance: f64,
    /// Relative smallest-eigenvalue threshold of the Jacobian for the degeneracy flag.
    pub singular_tol: f64,
    pub extra_seeds: Vec<Vec<f64>>,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 400,
            tol: 1e-13,
            dedup_distance: 1e-6,
            singular_tol: 1e-8,
            extra_seeds: Vec::new(),
        }
    }
}

fn jacobian(cfg: &ModelConfig, a: &[f64]) -> DMatrix<f64> {
    let n = cfg.n_modes();
    let d = cfg.derivative_matrix(a);
    let mut j = DMatrix::from_row_slice(n, n, &d);
    for (i, l) in cfg.basis().eigenvalues().iter().enumerate() {
        j[(i, i)] += l;
    }
    j
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton iteration on the stationary residual; returns the iterate and residual log.
pub fn newton(cfg: &ModelConfig, seed: &[f64], opts: &NewtonOptions) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut a = seed.to_vec();
    let mut r = cfg.stationary_residual(&a);
    let mut log = vec![norm(&r)];
    for _ in 0..opts.max_iter {
        let rn = *log.last().unwrap();
        if rn == 0.0 {
            break;
        }
        let j = jacobian(cfg, &a);
        let rhs = DVector::from_column_slice(&r);
        let step = match j.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|x| x.is_finite()) => s,
            _ => j.svd(true, true).solve(&rhs, 1e-14).ok()?,
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = a.iter().zip(step.iter()).map(|(x, s)| x - t * s).collect();
            let rt = cfg.stationary_residual(&trial);
            let rtn = norm(&rt);
            if rtn.is_finite() && (rtn < rn * (1.0 - 1e-4 * t) || (rn < opts.tol && rtn <= rn)) {
                a = trial;
                r = rt;
                log.push(rtn);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        // converged once the Newton correction itself is at round-off level
        if !accepted || norm(step.as_slice()) * t < 1e-13 * (1.0 + norm(&a)) {
            break;
        }
    }
    let last = *log.last().unwrap();
    (last < 1e-10).then_some((a, log))
}

/// Multistart seeds: origin and `+-c e_j / sqrt(lambda_j)` for `j <= 3`, `c in {0.5, 1, 2}`.
pub fn default_seeds(cfg: &ModelConfig) -> Vec<Vec<f64>> {
    let n = cfg.n_modes();
    let mut seeds = vec![vec![0.0; n]];
    for j in 0..n.min(3) {
        let l = cfg.basis().eigenvalues()[j];
        for &c in &[0.5, 1.0, 2.0] {
            for &sgn in &[1.0, -1.0] {
                let mut s = vec![0.0; n];
                s[j] = sgn * c / l.sqrt();
                seeds.push(s);
            }
        }
    }
    seeds
}

/// All equilibria reachable from the multistart set, deduplicated and sorted.
pub fn find_equilibria(cfg: &ModelConfig) -> Result<EquilibriumSet> {
    find_equilibria_with(cfg, &NewtonOptions::default())
}

pub fn find_equilibria_with(cfg: &ModelConfig, opts: &NewtonOptions) -> Result<EquilibriumSet> {
    if !cfg.report().compliant {
        return Err(Error::InvalidArgument(format!(
            "nonlinearity is not dissipative: {}",
            cfg.report().notes.join("; ")
        )));
    }
    let n = cfg.n_modes();
    let mut seeds = default_seeds(cfg);
    for s in &opts.extra_seeds {
        if s.len() > n {
            return Err(Error::SizeMismatch { expected: n, got: s.len() });
        }
        let mut s = s.clone();
        s.resize(n, 0.0);
        seeds.push(s);
    }
    let alpha = cfg.alpha();
    let mut roots: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for seed in &seeds {
        let Some((a, log)) = newton(cfg, seed, opts) else {
            continue;
        };
        let sa = State::at_rest(a.clone());
        let dup = roots
            .iter()
            .position(|(b, _)| cfg.basis().distance_h(&sa, &State::at_rest(b.clone()), alpha) < opts.dedup_distance);
        match dup {
            Some(k) => {
                if log.last() < roots[k].1.last() {
                    roots[k] = (a, log);
                }
            }
            None => roots.push((a, log)),
        }
    }
    roots.sort_by(|x, y| {
        for (p, q) in x.0.iter().zip(&y.0) {
            // coefficients equal to within the dedup scale compare as ties
            if (p - q).abs() > 1e-9 {
                return p.total_cmp(q);
            }
        }
        std::cmp::Ordering::Equal
    });
    let mut equilibria = Vec::with_capacity(roots.len());
    for (mut a, log) in roots {
        // snap round-off so symmetric roots print cleanly
        for x in a.iter_mut() {
            if x.abs() < 1e-14 {
                *x = 0.0;
            }
        }
        let state = State::at_rest(a.clone());
        let residual = norm(&cfg.stationary_residual(&a));
        let (stability, spectrum) = classify_stability(&state, cfg)?;
        let scale = cfg.basis().eigenvalues().iter().fold(1.0f64, |m, &l| m.max(l));
        let degenerate = spectrum.stiffness.iter().any(|k| k.abs() < opts.singular_tol * scale);
        equilibria.push(Equilibrium {
            state,
            stability,
            spectrum,
            residual,
            degenerate,
            newton_residuals: log,
        });
    }
    Ok(EquilibriumSet { equilibria })
}
