use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lbfgs::{minimize, LbfgsReport};
use super::objective::{Barrier, Evaluation, Objective};
use crate::control::ControlPath;
use crate::dynamics::{
    classify_stability, feedback_control, heteroclinic_scan, EquilibriumSet, FeedbackOptions, ModelConfig, ScanOptions,
    Stability,
};
use crate::error::{Error, Result};
use crate::graph::{fmt_real, inf_serde, QuasipotentialMatrix};
use crate::spectral::State;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MamOptions {
    /// Integration step of the controlled flow.
    pub dt: f64,
    /// Length of each constant piece of the control.
    pub interval: f64,
    /// Controlled modes; the feedback rank `N_*` (or all modes) when absent.
    pub n_control: Option<usize>,
    /// Horizons `T = m / alpha` for each multiple `m`.
    pub horizon_multiples: Vec<f64>,
    pub eta_start: f64,
    pub eta_min: f64,
    /// Ratio of consecutive entries of the geometric `eta` schedule.
    pub eta_ratio: f64,
    /// Penalty continuation, decreasing.
    pub sigmas: Vec<f64>,
    /// Iterations per `(eta, sigma)` stage.
    pub max_iter: usize,
    pub grad_tol: f64,
    pub memory: usize,
    pub feedback_init: bool,
    /// Extra solves with a shrunken target radius when the penalty leaves the endpoint outside `eta`.
    pub restoration_rounds: usize,
}

impl Default for MamOptions {
    fn default() -> Self {
        Self {
            dt: 0.05,
            interval: 0.5,
            n_control: None,
            horizon_multiples: vec![2.0, 5.0, 10.0, 20.0],
            eta_start: 0.2,
            eta_min: 0.01,
            eta_ratio: 0.5,
            sigmas: vec![1.0, 0.1, 0.01, 0.001],
            max_iter: 200,
            grad_tol: 1e-8,
            memory: 12,
            feedback_init: true,
            restoration_rounds: 6,
        }
    }
}

impl MamOptions {
    /// Descending `eta` values from `eta_start` down to `eta_min`.
    pub fn eta_schedule(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut e = self.eta_start;
        while e > self.eta_min * (1.0 + 1e-9) {
            out.push(e);
            e *= self.eta_ratio;
        }
        out.push(self.eta_min);
        out
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && self.interval > 0.0
            && !self.horizon_multiples.is_empty()
            && self.horizon_multiples.iter().all(|m| *m > 0.0)
            && self.eta_min > 0.0
            && self.eta_start >= self.eta_min
            && self.eta_ratio > 0.0
            && self.eta_ratio < 1.0
            && !self.sigmas.is_empty()
            && self.sigmas.iter().all(|s| *s > 0.0)
            && self.memory > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("inconsistent optimizer options {self:?}")))
        }
    }
}

/// Best value found at one target radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaPoint {
    pub eta: f64,
    #[serde(with = "inf_serde")]
    pub value: f64,
    pub feasible: bool,
    pub horizon: Option<f64>,
    /// Run that produced the value (`"downhill"`, `"zero@T"`, `"feedback@T"`), possibly from a smaller `eta`.
    pub source: String,
}

/// One `(T, init, eta, sigma)` optimizer stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub horizon: f64,
    pub init: String,
    pub eta: f64,
    pub sigma: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub objective: f64,
    pub action: f64,
    pub gap: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MamResult {
    /// `J_T(path)`, or infinite when no feasible control was found.
    #[serde(with = "inf_serde")]
    pub value: f64,
    pub feasible: bool,
    pub path: ControlPath,
    #[serde(with = "inf_serde")]
    pub endpoint_gap: f64,
    /// Smallest target radius with a feasible control.
    pub eta: f64,
    pub horizon: f64,
    pub n_control: usize,
    pub dt: f64,
    /// Running minimum over smaller radii, so non-increasing in `eta`.
    pub eta_curve: Vec<EtaPoint>,
    pub log: Vec<StageLog>,
    /// Quasipotential without the avoidance constraint (avoiding runs only).
    #[serde(with = "inf_serde::option")]
    pub unconstrained_value: Option<f64>,
    /// Grid distance of the returned path to the forbidden centers.
    #[serde(with = "inf_serde::option")]
    pub min_forbidden_distance: Option<f64>,
}

impl MamResult {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::ser(path, e))?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    /// `t, phi_1, ..` with one row per control interval.
    pub fn write_path_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::ser(path, e))?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.path.n_modes()).map(|j| format!("phi{j}")));
        w.write_record(&header).map_err(|e| Error::ser(path, e))?;
        for (k, t) in self.path.t_grid().iter().enumerate() {
            let mut row = vec![fmt_real(*t)];
            row.extend(self.path.interval(k).iter().map(|x| fmt_real(*x)));
            w.write_record(&row).map_err(|e| Error::ser(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

struct Best {
    value: f64,
    path: Option<ControlPath>,
    gap: f64,
    horizon: Option<f64>,
    source: String,
    forbidden_distance: f64,
}

impl Best {
    fn none() -> Self {
        Self {
            value: f64::INFINITY,
            path: None,
            gap: f64::INFINITY,
            horizon: None,
            source: String::new(),
            forbidden_distance: f64::INFINITY,
        }
    }
}

fn is_stationary(cfg: &ModelConfig, s: &State) -> bool {
    let r = cfg.stationary_residual(&s.position);
    r.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-8 && s.velocity.iter().all(|v| v.abs() < 1e-12)
}

/// Average `fine` (horizon starting at `offset`) over the intervals of a `k`-piece grid on `[0, t]`.
fn resample(fine: &ControlPath, offset: f64, t: f64, k: usize, nc: usize) -> Vec<f64> {
    let delta = t / k as f64;
    let hf = fine.interval_length();
    let mut out = vec![0.0; k * nc];
    let nm = fine.n_modes().min(nc);
    for i in 0..fine.n_intervals() {
        let (s0, s1) = (offset + i as f64 * hf, offset + (i + 1) as f64 * hf);
        let k0 = ((s0 / delta).floor().max(0.0) as usize).min(k - 1);
        let k1 = ((s1 / delta).ceil() as usize).min(k);
        for q in k0..k1 {
            let (a, b) = (q as f64 * delta, (q + 1) as f64 * delta);
            let w = (s1.min(b) - s0.max(a)).max(0.0) / delta;
            if w > 0.0 {
                for j in 0..nm {
                    out[q * nc + j] += w * fine.interval(i)[j];
                }
            }
        }
    }
    out
}

/// Controls pushing an unstable equilibrium off along each unstable direction
/// during the first interval; the free flow then follows the unstable manifold.
fn kick_inits(cfg: &ModelConfig, u1: &State, t: f64, k: usize, nc: usize) -> Vec<(String, Vec<f64>)> {
    if !is_stationary(cfg, u1) {
        return Vec::new();
    }
    let Ok((Stability::Unstable, spec)) = classify_stability(u1, cfg) else {
        return Vec::new();
    };
    let delta = t / k as f64;
    let mut out = Vec::new();
    for (d, (_, w)) in spec.unstable_directions.iter().enumerate() {
        let size = cfg.basis().norm_h_sq_raw(&w.position, &vec![0.0; w.n_modes()], cfg.alpha()).sqrt();
        if size == 0.0 {
            continue;
        }
        let kappa = 2.0 * KICK / (delta * delta * size);
        for sign in [1.0, -1.0] {
            let mut phi = vec![0.0; k * nc];
            for j in 0..nc {
                phi[j] = sign * kappa * w.position[j];
            }
            out.push((format!("kick{d}{}@{t}", if sign > 0.0 { '+' } else { '-' }), phi));
        }
    }
    out
}

/// H-size of the displacement produced by a kick initializer.
const KICK: f64 = 1e-3;

struct Runner<'a> {
    cfg: &'a ModelConfig,
    u1: &'a State,
    u2: &'a State,
    opts: &'a MamOptions,
    barrier: Option<(Vec<State>, f64)>,
    log: Vec<StageLog>,
}

impl<'a> Runner<'a> {
    fn objective(&self, horizon: f64, k: usize, nc: usize) -> Result<Objective<'a>> {
        let mut obj = Objective::new(self.cfg, self.u1, self.u2, horizon, k, nc, self.opts.dt)?;
        if let Some((c, r)) = &self.barrier {
            obj.barrier = Some(Barrier {
                centers: c.clone(),
                radius: 1.02 * r,
            });
        }
        Ok(obj)
    }

    fn forbidden_radius(&self) -> f64 {
        self.barrier.as_ref().map_or(0.0, |b| b.1)
    }

    /// Minimize in the scaled variables `psi = phi sqrt(delta) / b`, where the action is `|psi|^2 / 2`.
    fn solve(&mut self, obj: &mut Objective, psi: &mut [f64], init: &str) -> Option<LbfgsReport> {
        let nc = obj.n_control();
        let delta = obj.interval_length();
        let scale: Vec<f64> = self.cfg.noise().b[..nc].iter().map(|b| b / delta.sqrt()).collect();
        let mut phi = vec![0.0; psi.len()];
        let mut g = vec![0.0; psi.len()];
        let report = minimize(
            |x, gx| {
                for (i, (p, v)) in phi.iter_mut().zip(x).enumerate() {
                    *p = v * scale[i % nc];
                }
                let e = obj.evaluate(&phi, Some(&mut g)).ok()?;
                for (i, (o, v)) in gx.iter_mut().zip(&g).enumerate() {
                    *o = v * scale[i % nc];
                }
                e.objective.is_finite().then_some(e.objective)
            },
            psi,
            self.opts.max_iter,
            self.opts.memory,
            self.opts.grad_tol,
        );
        if let Some(r) = &report {
            let phi = to_phi(psi, &scale);
            if let Ok(e) = obj.evaluate(&phi, None) {
                self.log.push(StageLog {
                    horizon: obj.horizon(),
                    init: init.to_string(),
                    eta: obj.eta,
                    sigma: obj.sigma,
                    iterations: r.iterations,
                    evaluations: r.evaluations,
                    objective: e.objective,
                    action: e.action,
                    gap: e.gap,
                    converged: r.converged,
                });
            }
        }
        report
    }
}

fn to_phi(psi: &[f64], scale: &[f64]) -> Vec<f64> {
    let nc = scale.len();
    psi.iter().enumerate().map(|(i, v)| v * scale[i % nc]).collect()
}

fn run(cfg: &ModelConfig, u1: &State, u2: &State, barrier: Option<(Vec<State>, f64)>, opts: &MamOptions) -> Result<MamResult> {
    opts.validate()?;
    let n = cfg.n_modes();
    u1.check_len(n)?;
    u2.check_len(n)?;
    u1.check_finite()?;
    u2.check_finite()?;
    let alpha = cfg.alpha();
    let etas = opts.eta_schedule();
    let horizons: Vec<f64> = opts.horizon_multiples.iter().map(|m| m / alpha).collect();
    let t_max = horizons.iter().copied().fold(0.0, f64::max);
    let delta_k = |t: f64| ((t / opts.interval).round() as usize).max(1);

    let fb = if opts.feedback_init {
        let rho1 = cfg.basis().distance_h(u1, u2, alpha) * (1.0 + 1e-9);
        let rho2 = (0.5 * opts.eta_min).min(0.5 * rho1);
        if rho1 > 0.0 {
            let fo = FeedbackOptions {
                dt: opts.dt,
                ..Default::default()
            };
            feedback_control(u1, u2, rho1, rho2, cfg, &fo).ok()
        } else {
            None
        }
    } else {
        None
    };
    let nc = opts
        .n_control
        .unwrap_or_else(|| fb.as_ref().map_or(n, |f| f.n_modes))
        .clamp(1, n);

    let mut runner = Runner {
        cfg,
        u1,
        u2,
        opts,
        barrier,
        log: Vec::new(),
    };
    let rho_f = runner.forbidden_radius();
    let mut best: Vec<Best> = etas.iter().map(|_| Best::none()).collect();

    // downhill probe: the free flow may already pass through the target ball
    let kmax = delta_k(t_max);
    let mut probe = runner.objective(kmax as f64 * opts.interval, kmax, nc)?;
    let zeros = vec![0.0; probe.n_params()];
    if probe.evaluate(&zeros, None).is_ok() {
        let gaps = probe.gaps_at_interval_ends();
        let bd = probe.barrier_distance_prefix();
        for (e, b) in etas.iter().zip(best.iter_mut()) {
            if let Some(k) = (0..kmax).find(|&k| gaps[k] <= *e && bd[k] >= rho_f) {
                let t = (k + 1) as f64 * opts.interval;
                *b = Best {
                    value: 0.0,
                    path: Some(ControlPath::zeros(t, k + 1, nc)?),
                    gap: gaps[k],
                    horizon: Some(t),
                    source: "downhill".into(),
                    forbidden_distance: bd[k],
                };
            }
        }
    }
    drop(probe);

    if best.iter().any(|b| b.value > 0.0) {
        for &t in &horizons {
            let k = delta_k(t);
            let t_eff = k as f64 * opts.interval;
            let kicks = kick_inits(cfg, u1, t_eff, k, nc);
            let mut inits: Vec<(String, Vec<f64>)> = Vec::new();
            if kicks.is_empty() {
                inits.push((format!("zero@{t_eff}"), vec![0.0; k * nc]));
            }
            if let Some(f) = &fb {
                if f.horizon <= t_eff {
                    let offset = if is_stationary(cfg, u1) { t_eff - f.horizon } else { 0.0 };
                    inits.push((format!("feedback@{t_eff}"), resample(&f.control, offset, t_eff, k, nc)));
                }
            }
            inits.extend(kicks);
            let delta = t_eff / k as f64;
            let scale: Vec<f64> = cfg.noise().b[..nc].iter().map(|b| b / delta.sqrt()).collect();
            for (name, phi0) in inits {
                let mut psi: Vec<f64> = phi0.iter().enumerate().map(|(i, p)| p / scale[i % nc]).collect();
                let mut obj = runner.objective(t_eff, k, nc)?;
                for (ei, &eta) in etas.iter().enumerate() {
                    if best[ei].value == 0.0 {
                        continue;
                    }
                    for &sigma in &opts.sigmas {
                        obj.eta = eta;
                        obj.sigma = sigma;
                        runner.solve(&mut obj, &mut psi, &name);
                    }
                    let mut e: Option<Evaluation> = obj.evaluate(&to_phi(&psi, &scale), None).ok();
                    // shrink the target radius and push the barrier out until the constraints hold
                    let mut eta_t = eta;
                    let mut r_b = 1.02 * rho_f;
                    for _ in 0..opts.restoration_rounds {
                        let Some(ev) = e else { break };
                        let gap_bad = ev.gap > eta;
                        let bar_bad = ev.min_barrier_distance < rho_f;
                        if !gap_bad && !bar_bad {
                            break;
                        }
                        if gap_bad {
                            eta_t = (eta_t - (ev.gap - eta) - 0.01 * eta).max(0.0);
                        }
                        if bar_bad {
                            r_b += (rho_f - ev.min_barrier_distance) + 0.01 * rho_f;
                            if let Some(b) = obj.barrier.as_mut() {
                                b.radius = r_b;
                            }
                        }
                        obj.eta = eta_t;
                        runner.solve(&mut obj, &mut psi, &name);
                        e = obj.evaluate(&to_phi(&psi, &scale), None).ok();
                    }
                    if let Some(b) = obj.barrier.as_mut() {
                        b.radius = 1.02 * rho_f;
                    }
                    if let Some(ev) = e {
                        if ev.gap <= eta && ev.min_barrier_distance >= rho_f && ev.action < best[ei].value {
                            best[ei] = Best {
                                value: ev.action,
                                path: Some(obj.path(&to_phi(&psi, &scale))?),
                                gap: ev.gap,
                                horizon: Some(t_eff),
                                source: name.clone(),
                                forbidden_distance: ev.min_barrier_distance,
                            };
                        }
                    }
                }
            }
        }
    }

    // a control feasible for a smaller radius is feasible for every larger one
    for i in (0..etas.len().saturating_sub(1)).rev() {
        if best[i + 1].value < best[i].value {
            let b = &best[i + 1];
            best[i] = Best {
                value: b.value,
                path: b.path.clone(),
                gap: b.gap,
                horizon: b.horizon,
                source: b.source.clone(),
                forbidden_distance: b.forbidden_distance,
            };
        }
    }
    let eta_curve: Vec<EtaPoint> = etas
        .iter()
        .zip(&best)
        .map(|(e, b)| EtaPoint {
            eta: *e,
            value: b.value,
            feasible: b.value.is_finite(),
            horizon: b.horizon,
            source: b.source.clone(),
        })
        .collect();
    let pick = (0..etas.len()).rev().find(|&i| best[i].value.is_finite());
    let barrier_used = runner.barrier.is_some();
    let log = std::mem::take(&mut runner.log);
    Ok(match pick {
        Some(i) => {
            let b = &best[i];
            let path = b.path.clone().expect("feasible entries carry a path");
            MamResult {
                value: path.action(cfg.noise()),
                feasible: true,
                endpoint_gap: b.gap,
                eta: etas[i],
                horizon: path.horizon(),
                path,
                n_control: nc,
                dt: opts.dt,
                eta_curve,
                log,
                unconstrained_value: None,
                min_forbidden_distance: barrier_used.then_some(b.forbidden_distance),
            }
        }
        None => MamResult {
            value: f64::INFINITY,
            feasible: false,
            path: ControlPath::zeros(t_max, kmax, nc)?,
            endpoint_gap: f64::INFINITY,
            eta: opts.eta_min,
            horizon: t_max,
            n_control: nc,
            dt: opts.dt,
            eta_curve,
            log,
            unconstrained_value: None,
            min_forbidden_distance: None,
        },
    })
}

/// Minimum-action estimate of `V(u1, u2)`: the smallest action of a control
/// steering `u1` into the `eta`-ball of `u2`, over the `T` and `eta` schedules.
///
/// Returned values are upper bounds on the infimum.
pub fn quasipotential(cfg: &ModelConfig, u1: &State, u2: &State, opts: &MamOptions) -> Result<MamResult> {
    run(cfg, u1, u2, None, opts)
}

/// `V~(u1, u2)`: as [`quasipotential`] but the path must stay at least
/// `rho_avoid` away from every point of `forbidden`.
///
/// The unconstrained problem is solved first; when its optimal path already
/// avoids the balls the two values coincide. A constrained path is also
/// admissible for the unconstrained problem, so the reported unconstrained
/// value is the smaller of the two and `V~ >= V` holds by construction.
pub fn quasipotential_avoiding(
    cfg: &ModelConfig,
    u1: &State,
    u2: &State,
    forbidden: &[State],
    rho_avoid: f64,
    opts: &MamOptions,
) -> Result<MamResult> {
    let alpha = cfg.alpha();
    for c in forbidden {
        c.check_len(cfg.n_modes())?;
        if cfg.basis().distance_h(c, u1, alpha) < rho_avoid || cfg.basis().distance_h(c, u2, alpha) < rho_avoid {
            return Err(Error::InvalidArgument("forbidden ball contains an endpoint".into()));
        }
    }
    let mut free = quasipotential(cfg, u1, u2, opts)?;
    if forbidden.is_empty() {
        free.unconstrained_value = Some(free.value);
        return Ok(free);
    }
    if !(rho_avoid > 0.0) {
        return Err(Error::InvalidArgument(format!("avoidance radius {rho_avoid}")));
    }
    let dmin = if free.feasible {
        let tr = crate::dynamics::flow_controlled(cfg, u1, &free.path, opts.dt)?;
        tr.states
            .iter()
            .flat_map(|s| forbidden.iter().map(move |c| cfg.basis().distance_h(s, c, alpha)))
            .fold(f64::INFINITY, f64::min)
    } else {
        0.0
    };
    if free.feasible && dmin >= rho_avoid {
        free.unconstrained_value = Some(free.value);
        free.min_forbidden_distance = Some(dmin);
        return Ok(free);
    }
    let mut con = run(cfg, u1, u2, Some((forbidden.to_vec(), rho_avoid)), opts)?;
    con.unconstrained_value = Some(free.value.min(con.value));
    Ok(con)
}

/// `V_A(u*)`: minimum of [`quasipotential`] from the equilibria and from
/// waypoints of the scanned heteroclinic orbits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorValue {
    #[serde(with = "inf_serde")]
    pub value: f64,
    pub seed: String,
    pub per_seed: Vec<(String, inf_serde::Real)>,
}

pub fn quasipotential_from_attractor(
    cfg: &ModelConfig,
    u_star: &State,
    eq: &EquilibriumSet,
    opts: &MamOptions,
    scan: &ScanOptions,
    waypoints_per_orbit: usize,
) -> Result<AttractorValue> {
    if eq.is_empty() {
        return Err(Error::InvalidArgument("empty equilibrium set".into()));
    }
    let mut seeds: Vec<(String, State)> = eq
        .equilibria
        .iter()
        .enumerate()
        .map(|(i, e)| (format!("eq{i}"), e.state.clone()))
        .collect();
    for (c, conn) in heteroclinic_scan(eq, cfg, scan)?.iter().enumerate() {
        let w = &conn.waypoints;
        let take = waypoints_per_orbit.min(w.len());
        for q in 0..take {
            let idx = (q * (w.len() - 1)) / take.max(2).saturating_sub(1).max(1);
            seeds.push((format!("orbit{c}:{idx}"), w[idx.min(w.len() - 1)].clone()));
        }
    }
    let alpha = cfg.alpha();
    if let Some((name, _)) = seeds
        .iter()
        .find(|(_, s)| cfg.basis().distance_h(s, u_star, alpha) <= opts.eta_min)
    {
        return Ok(AttractorValue {
            value: 0.0,
            seed: name.clone(),
            per_seed: vec![(name.clone(), inf_serde::Real(0.0))],
        });
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut best = (f64::INFINITY, String::new());
    for (name, s) in &seeds {
        let v = quasipotential(cfg, s, u_star, opts)?.value;
        if v < best.0 {
            best = (v, name.clone());
        }
        per_seed.push((name.clone(), inf_serde::Real(v)));
    }
    Ok(AttractorValue {
        value: best.0,
        seed: best.1,
        per_seed,
    })
}

/// Pairwise `V(u_i, u_j)` between equilibria, with per-entry results.
pub fn quasipotential_matrix(
    cfg: &ModelConfig,
    eq: &EquilibriumSet,
    opts: &MamOptions,
) -> Result<(QuasipotentialMatrix, Vec<Vec<Option<MamResult>>>)> {
    let l = eq.len();
    let mut values = vec![vec![0.0; l]; l];
    let mut prov = vec![vec!["diagonal".to_string(); l]; l];
    let mut results = vec![vec![None; l]; l];
    for i in 0..l {
        for j in 0..l {
            if i == j {
                continue;
            }
            let r = quasipotential(cfg, &eq.equilibria[i].state, &eq.equilibria[j].state, opts)?;
            values[i][j] = r.value;
            prov[i][j] = format!("mam:{i}->{j}:eta={}", r.eta);
            results[i][j] = Some(r);
        }
    }
    Ok((QuasipotentialMatrix::with_provenance(values, prov)?, results))
}
