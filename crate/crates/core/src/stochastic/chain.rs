use serde::{Deserialize, Serialize};

use super::Simulator;
use crate::dynamics::ModelConfig;
use crate::error::{Error, Result};
use crate::spectral::{SpectralBasis, State};
use crate::stats::{clopper_pearson, mean_interval};

/// Radii `rho1' < rho0' < rho1 < rho0 < rho*` of the nested neighbourhoods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Radii {
    pub rho1_prime: f64,
    pub rho0_prime: f64,
    pub rho1: f64,
    pub rho0: f64,
    pub rho_star: f64,
}

/// Balls `g_i = B(u_i, rho1)`, `g~_i = B(u_i, rho0)` around the equilibria and
/// optionally `g_{l+1} = B(u, rho1')`, `g~_{l+1} = B(u, rho0')` around one extra point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSystem {
    pub centers: Vec<State>,
    pub extra: Option<State>,
    pub radii: Radii,
}

impl NeighborhoodSystem {
    pub fn new(cfg: &ModelConfig, centers: Vec<State>, extra: Option<State>, radii: Radii) -> Result<Self> {
        let r = radii;
        let ordered = 0.0 < r.rho1_prime
            && r.rho1_prime < r.rho0_prime
            && r.rho0_prime < r.rho1
            && r.rho1 < r.rho0
            && r.rho0 < r.rho_star;
        if !ordered {
            return Err(Error::InvalidArgument(format!("radii must be strictly ordered: {r:?}")));
        }
        if centers.is_empty() {
            return Err(Error::InvalidArgument("no centers".into()));
        }
        let ns = Self { centers, extra, radii };
        let m = ns.len();
        for i in 0..m {
            ns.center(i).check_len(cfg.n_modes())?;
            for k in i + 1..m {
                let d = cfg.basis().distance_h(ns.center(i), ns.center(k), cfg.alpha());
                if d <= ns.outer_radius(i) + ns.outer_radius(k) {
                    return Err(Error::InvalidArgument(format!(
                        "neighbourhoods {i} and {k} overlap (distance {d})"
                    )));
                }
            }
        }
        Ok(ns)
    }

    /// Number of balls, `l` or `l + 1`.
    pub fn len(&self) -> usize {
        self.centers.len() + usize::from(self.extra.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, i: usize) -> &State {
        if i < self.centers.len() {
            &self.centers[i]
        } else {
            self.extra.as_ref().expect("index within len")
        }
    }

    pub fn inner_radius(&self, i: usize) -> f64 {
        if i < self.centers.len() {
            self.radii.rho1
        } else {
            self.radii.rho1_prime
        }
    }

    pub fn outer_radius(&self, i: usize) -> f64 {
        if i < self.centers.len() {
            self.radii.rho0
        } else {
            self.radii.rho0_prime
        }
    }

    /// Index of the closed inner ball containing `s`.
    pub fn in_inner(&self, basis: &SpectralBasis, alpha: f64, s: &State) -> Option<usize> {
        (0..self.len()).find(|&i| basis.distance_h(s, self.center(i), alpha) <= self.inner_radius(i))
    }

    /// Index of the open outer ball containing `s`.
    pub fn in_outer(&self, basis: &SpectralBasis, alpha: f64, s: &State) -> Option<usize> {
        (0..self.len()).find(|&i| basis.distance_h(s, self.center(i), alpha) < self.outer_radius(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEntry {
    /// Hitting time `tau_n` of the boundary of `g`.
    pub tau: f64,
    /// Hitting point `Z_n`.
    pub z: State,
    pub index: usize,
    /// Preceding exit time `sigma_{n-1}` from `g~`.
    pub sigma_prev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSample {
    pub entries: Vec<ChainEntry>,
    /// Ball containing the start, if any.
    pub start_index: Option<usize>,
    /// Exit time from `g~` that is still waiting for its hit (or the first one if never left).
    pub pending_exit: Option<f64>,
    /// Fewer hits than requested because the step budget ran out.
    pub partial: bool,
    /// Started inside `g~` and never left it.
    pub no_exit: bool,
    pub steps: u64,
    pub final_time: f64,
}

impl ChainSample {
    /// Empirical one-step transition counts between consecutive hits.
    pub fn transition_counts(&self, n_balls: usize) -> Vec<Vec<u64>> {
        let mut m = vec![vec![0u64; n_balls]; n_balls];
        for w in self.entries.windows(2) {
            m[w[0].index][w[1].index] += 1;
        }
        m
    }

    /// Row-normalized transition counts; empty rows stay zero.
    pub fn transition_matrix(&self, n_balls: usize) -> Vec<Vec<f64>> {
        self.transition_counts(n_balls)
            .into_iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter().map(|&c| if s > 0 { c as f64 / s as f64 } else { 0.0 }).collect()
            })
            .collect()
    }

    /// Durations `tau_{n+1} - tau_n` between consecutive hits, grouped by starting ball.
    pub fn return_times(&self, from: Option<usize>) -> Vec<f64> {
        self.entries
            .windows(2)
            .filter(|w| from.is_none_or(|i| w[0].index == i))
            .map(|w| w[1].tau - w[0].tau)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOptions {
    pub dt: f64,
    pub max_steps: u64,
    pub seed: u64,
    pub stream: u64,
    /// Crossing refinement tolerance relative to `rho1`.
    pub refine_tol: f64,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            dt: 0.01,
            max_steps: 10_000_000,
            seed: 0,
            stream: 0,
            refine_tol: 1e-3,
        }
    }
}

/// Bisection on the segment `a -> b` for `|x - c|_H = r`; returns the fraction and point.
fn refine_crossing(basis: &SpectralBasis, alpha: f64, a: &State, b: &State, c: &State, r: f64, tol: f64) -> (f64, State) {
    let sa = basis.distance_h(a, c, alpha) - r;
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut x = b.clone();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        a.lerp_into(b, mid, &mut x);
        let g = basis.distance_h(&x, c, alpha) - r;
        if g.abs() <= tol {
            return (mid, x);
        }
        if (g > 0.0) == (sa > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    a.lerp_into(b, hi, &mut x);
    (hi, x)
}

/// Alternate exits from `g~` and hits of the boundary of `g` along one path.
pub fn boundary_chain_run(
    cfg: &ModelConfig,
    ns: &NeighborhoodSystem,
    eps: f64,
    s0: &State,
    n_hits: usize,
    opts: &ChainOptions,
) -> Result<ChainSample> {
    let basis = cfg.basis();
    let alpha = cfg.alpha();
    let tol = opts.refine_tol * ns.radii.rho1;
    let mut sim = Simulator::new(cfg, s0, eps, opts.dt, opts.seed, opts.stream)?;
    let start_index = ns.in_outer(basis, alpha, s0);
    // while inside g~ we wait for an exit, otherwise for a hit of g
    let mut inside = start_index;
    let mut sigma: Option<f64> = None;
    let mut exited = false;
    let mut entries = Vec::with_capacity(n_hits);
    let mut prev = s0.clone();
    let dt = sim.dt();
    while entries.len() < n_hits && sim.steps() < opts.max_steps {
        sim.advance()?;
        let t0 = sim.time() - dt;
        let s = sim.state();
        if let Some(k) = inside {
            let c = ns.center(k);
            if basis.distance_h(s, c, alpha) >= ns.outer_radius(k) {
                let (frac, _) = refine_crossing(basis, alpha, &prev, s, c, ns.outer_radius(k), tol);
                sigma = Some(t0 + frac * dt);
                inside = None;
                exited = true;
            }
        }
        if inside.is_none() {
            if let Some(i) = ns.in_inner(basis, alpha, s) {
                let (frac, z) = refine_crossing(basis, alpha, &prev, s, ns.center(i), ns.inner_radius(i), tol);
                let tau = (t0 + frac * dt).max(sigma.unwrap_or(0.0));
                entries.push(ChainEntry {
                    tau,
                    z,
                    index: i,
                    sigma_prev: sigma.unwrap_or(0.0),
                });
                sigma = None;
                inside = Some(i);
            }
        }
        prev.clone_from(s);
    }
    Ok(ChainSample {
        partial: entries.len() < n_hits,
        no_exit: start_index.is_some() && !exited,
        entries,
        start_index,
        pending_exit: sigma,
        steps: sim.steps(),
        final_time: sim.time(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEstimate {
    pub eps: f64,
    pub from: usize,
    pub to: usize,
    /// Transitions starting on the boundary of `g_from`.
    pub trials: u64,
    pub hits: u64,
    pub p_hat: f64,
    pub ci: (f64, f64),
    /// `-eps ln p_hat`, absent when no hit was observed.
    pub neg_eps_ln_p: Option<f64>,
    /// `-eps ln` of the CI ends (lower value from the upper probability).
    pub neg_eps_ln_ci: (f64, f64),
    pub bound_only: bool,
    /// Row of the empirical one-step matrix for `from`.
    pub row: Vec<f64>,
    pub partial: bool,
}

/// Estimate `P~(boundary of g_i -> boundary of g_j)` for each `eps` from the boundary chain.
pub fn estimate_transition(
    cfg: &ModelConfig,
    ns: &NeighborhoodSystem,
    eps_list: &[f64],
    i: usize,
    j: usize,
    n_samples: u64,
    opts: &ChainOptions,
) -> Result<Vec<TransitionEstimate>> {
    if i == j {
        return Err(Error::InvalidArgument("transition needs distinct balls".into()));
    }
    if i >= ns.len() || j >= ns.len() {
        return Err(Error::InvalidArgument(format!("ball index out of range ({i}, {j})")));
    }
    let m = ns.len();
    let basis = cfg.basis();
    let alpha = cfg.alpha();
    let tol = opts.refine_tol * ns.radii.rho1;
    let mut out = Vec::with_capacity(eps_list.len());
    for (k, &eps) in eps_list.iter().enumerate() {
        let mut sim = Simulator::new(cfg, ns.center(i), eps, opts.dt, opts.seed, opts.stream + k as u64)?;
        let mut counts = vec![0u64; m];
        // each transition starts from the last hit point on the boundary of g_i
        let mut start: Option<State> = None;
        let mut inside = Some(i);
        let mut prev = ns.center(i).clone();
        while sim.steps() < opts.max_steps && counts.iter().sum::<u64>() < n_samples {
            sim.advance()?;
            let s = sim.state();
            if let Some(kb) = inside {
                if basis.distance_h(s, ns.center(kb), alpha) >= ns.outer_radius(kb) {
                    inside = None;
                }
            }
            if inside.is_none() {
                if let Some(h) = ns.in_inner(basis, alpha, s) {
                    let (_, z) = refine_crossing(basis, alpha, &prev, s, ns.center(h), ns.inner_radius(h), tol);
                    if start.is_some() {
                        counts[h] += 1;
                    }
                    if h == i {
                        start = Some(z);
                    } else {
                        let back = start.clone().unwrap_or_else(|| ns.center(i).clone());
                        sim.set_state(&back);
                    }
                    inside = Some(i);
                }
            }
            prev.clone_from(sim.state());
        }
        let trials: u64 = counts.iter().sum();
        let hits = counts[j];
        let p_hat = if trials > 0 { hits as f64 / trials as f64 } else { 0.0 };
        let ci = clopper_pearson(hits, trials, 0.95);
        let to_log = |p: f64| if p > 0.0 { -eps * p.ln() } else { f64::INFINITY };
        let row = counts
            .iter()
            .map(|&c| if trials > 0 { c as f64 / trials as f64 } else { 0.0 })
            .collect();
        out.push(TransitionEstimate {
            eps,
            from: i,
            to: j,
            trials,
            hits,
            p_hat,
            ci,
            neg_eps_ln_p: (hits > 0).then(|| to_log(p_hat)),
            neg_eps_ln_ci: (to_log(ci.1), to_log(ci.0)),
            bound_only: hits == 0,
            row,
            partial: trials < n_samples,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgfRow {
    pub delta: f64,
    pub mean: f64,
    pub std_err: f64,
    pub ci: (f64, f64),
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgfTable {
    pub eps: f64,
    pub n_samples: usize,
    pub mean_time: f64,
    pub rows: Vec<MgfRow>,
    pub largest_stable_delta: Option<f64>,
}

/// Empirical `E exp(delta tau_1)` of the boundary-to-boundary time of the chain.
pub fn exit_time_moments(
    cfg: &ModelConfig,
    ns: &NeighborhoodSystem,
    eps: f64,
    deltas: &[f64],
    n_samples: usize,
    opts: &ChainOptions,
) -> Result<MgfTable> {
    if deltas.iter().any(|d| !(*d >= 0.0)) || deltas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("deltas must be nonnegative and ascending".into()));
    }
    let chain = boundary_chain_run(cfg, ns, eps, ns.center(0), n_samples + 1, opts)?;
    let taus = chain.return_times(None);
    if taus.len() < 2 {
        return Err(Error::InvalidState(format!(
            "only {} boundary-to-boundary times observed",
            taus.len()
        )));
    }
    let mean_time = taus.iter().sum::<f64>() / taus.len() as f64;
    let mut rows = Vec::with_capacity(deltas.len());
    let mut largest_stable_delta = None;
    for &d in deltas {
        let xs: Vec<f64> = taus.iter().map(|t| (d * t).exp()).collect();
        let iv = mean_interval(&xs, 0.95);
        let (mean, se) = if d == 0.0 { (1.0, 0.0) } else { (iv.mean, iv.std_err) };
        // heavy tails: the largest term dominates the sum or the error is not small
        let max = xs.iter().copied().fold(0.0, f64::max);
        let stable = mean.is_finite() && se.is_finite() && se <= 0.1 * mean && max <= 0.1 * mean * xs.len() as f64;
        if stable {
            largest_stable_delta = Some(d);
        }
        rows.push(MgfRow {
            delta: d,
            mean,
            std_err: se,
            ci: if d == 0.0 { (1.0, 1.0) } else { (iv.low, iv.high) },
            stable,
        });
    }
    Ok(MgfTable {
        eps,
        n_samples: taus.len(),
        mean_time,
        rows,
        largest_stable_delta,
    })
}
