//! End-to-end experiments: the deterministic pipeline (equilibria,
//! quasipotentials, rate function), Monte Carlo estimates of the stationary
//! measure and of the boundary chain, and verdicts comparing the two.

mod config;
mod emit;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::action::{quasipotential_avoiding, quasipotential_matrix, MamOptions};
use crate::dynamics::{find_equilibria, EquilibriumSet, ModelConfig, ModelParams, Stability};
use crate::error::{Error, Result};
use crate::graph::{inf_serde, QuasipotentialMatrix, RateFunctionTable};
use crate::spectral::State;
use crate::stats::{kendall_s, kendall_upper_p, t_quantile, wls};
use crate::stochastic::{
    estimate_stationary, estimate_transition, ChainOptions, Event, NeighborhoodSystem, Occupation, Radii,
    StationaryEstimate, StationaryOptions,
};

pub use config::{
    Budget, ChainParams, ExperimentConfig, NeighborhoodParams, OutputParams, SamplingParams, SimulateParams,
    VerdictParams, SCHEMA_VERSION,
};
pub use emit::{emit, read_report, Format, Report};

/// Largest system for which the in-tree minima are tabulated next to the chain minima.
const IN_TREE_LIMIT: usize = 6;

/// Streams of the boundary chain start here, clear of the occupation runs.
const CHAIN_STREAM_BASE: u64 = 1 << 32;

/// Run `f(0..n)` on a pool of scoped threads; results keep their index order.
pub(crate) fn fan_out<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(n);
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= n {
                    break;
                }
                let r = f(k);
                *slots[k].lock().expect("unpoisoned") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("unpoisoned").expect("every index ran"))
        .collect()
}

/// Equilibria, quasipotentials and the rate function of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub model: ModelParams,
    /// Optimizer settings behind `raw`, when it was computed here.
    pub mam: Option<MamOptions>,
    pub equilibria: EquilibriumSet,
    /// Minimum-action values.
    pub raw: QuasipotentialMatrix,
    /// Shortest-path closure of `raw` through intermediate equilibria.
    pub closed: QuasipotentialMatrix,
    pub rate: RateFunctionTable,
}

impl Pipeline {
    pub fn compute(model: &ModelParams, mam: &MamOptions) -> Result<Self> {
        let cfg = ModelConfig::from_params(model)?;
        let equilibria = find_equilibria(&cfg)?;
        let (raw, _) = quasipotential_matrix(&cfg, &equilibria, mam)?;
        let mut p = Self::from_matrix(model.clone(), equilibria, raw)?;
        p.mam = Some(mam.clone());
        Ok(p)
    }

    pub fn from_matrix(model: ModelParams, equilibria: EquilibriumSet, raw: QuasipotentialMatrix) -> Result<Self> {
        if raw.size() != equilibria.len() {
            return Err(Error::SizeMismatch {
                expected: equilibria.len(),
                got: raw.size(),
            });
        }
        let closed = raw.closure();
        let stable = stable_mask(&equilibria);
        let rate = RateFunctionTable::build(&closed, &stable, closed.size() <= IN_TREE_LIMIT)?;
        Ok(Self {
            model,
            mam: None,
            equilibria,
            raw,
            closed,
            rate,
        })
    }

    pub fn config(&self) -> Result<ModelConfig> {
        ModelConfig::from_params(&self.model)
    }

    pub fn stable_mask(&self) -> Vec<bool> {
        stable_mask(&self.equilibria)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::ser(path, e))?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&s).map_err(|e| Error::ser(path, e))?;
        let mut out = Self::from_matrix(p.model, p.equilibria, p.raw)?;
        out.mam = p.mam;
        Ok(out)
    }
}

fn stable_mask(eq: &EquilibriumSet) -> Vec<bool> {
    eq.equilibria.iter().map(|e| e.stability == Stability::Stable).collect()
}

/// The stored pipeline named in the config when present, else a fresh computation.
pub fn load_or_compute_pipeline(exp: &ExperimentConfig) -> Result<Pipeline> {
    if let Some(path) = &exp.output.pipeline {
        if path.exists() {
            let p = Pipeline::read_json(path)?;
            if p.model != exp.model || p.mam.as_ref().is_some_and(|m| *m != exp.mam) {
                return Err(Error::Config(format!(
                    "stored pipeline {} was computed for a different model or optimizer",
                    path.display()
                )));
            }
            return Ok(p);
        }
    }
    Pipeline::compute(&exp.model, &exp.mam)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Inconsistent,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Consistent => "consistent",
            Verdict::Inconsistent => "inconsistent",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Estimate of `mu(g_j)` at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdpCell {
    pub ball: usize,
    pub equilibrium: usize,
    pub eps: f64,
    pub mu_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Steps spent in the ball.
    pub hits: u64,
    pub neg_eps_ln_mu: Option<f64>,
    /// `-eps ln` of the CI ends, lower value first.
    #[serde(with = "inf_serde")]
    pub neg_eps_ln_low: f64,
    #[serde(with = "inf_serde")]
    pub neg_eps_ln_high: f64,
    #[serde(with = "inf_serde")]
    pub rate: f64,
    /// Smallest margin for which the CI meets `[rate - beta, rate + beta]`.
    #[serde(with = "inf_serde")]
    pub beta: f64,
    pub insufficient: bool,
}

/// Slope of `ln mu(g_j)` against `-1/eps` compared with the rate at `u_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSummary {
    pub ball: usize,
    pub equilibrium: usize,
    pub stable: bool,
    #[serde(with = "inf_serde")]
    pub rate: f64,
    #[serde(with = "inf_serde")]
    pub rate_stable_only: f64,
    /// Noise levels entering the fit.
    pub points: usize,
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    pub intercept: Option<f64>,
    pub rel_deviation: Option<f64>,
    /// Largest cell margin.
    #[serde(with = "inf_serde")]
    pub beta: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LdpReport {
    pub seed: u64,
    pub eps: Vec<f64>,
    pub radius: f64,
    pub tolerance: f64,
    pub cells: Vec<LdpCell>,
    pub balls: Vec<BallSummary>,
    pub stability: Option<StabilityReport>,
}

impl LdpReport {
    pub fn ball(&self, equilibrium: usize) -> Option<&BallSummary> {
        self.balls.iter().find(|b| b.equilibrium == equilibrium)
    }
}

/// Trend of `eps ln mu(A)` over the schedule for one set `A`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub label: String,
    pub eta: f64,
    pub eps: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    #[serde(with = "inf_serde::vec")]
    pub eps_ln_mu: Vec<f64>,
    /// Mann-Kendall statistic of `eps ln mu` in schedule order.
    pub kendall_s: i64,
    /// One-sided p-value of an increasing trend.
    pub p_value: f64,
    pub verdict: Option<Verdict>,
}

/// Estimate of `P~(boundary of g_from -> boundary of g_to)` at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCell {
    pub from: usize,
    pub to: usize,
    pub eps: f64,
    pub trials: u64,
    pub hits: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub neg_eps_ln_p: Option<f64>,
    #[serde(with = "inf_serde")]
    pub neg_eps_ln_low: f64,
    #[serde(with = "inf_serde")]
    pub neg_eps_ln_high: f64,
    #[serde(with = "inf_serde")]
    pub v_tilde: f64,
    /// `|-eps ln p_hat - V~|`, absent without hits.
    pub beta: Option<f64>,
    pub resolved: bool,
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub from: usize,
    pub to: usize,
    pub from_equilibrium: usize,
    pub to_equilibrium: usize,
    #[serde(with = "inf_serde")]
    pub v_tilde: f64,
    pub v_tilde_source: String,
    /// Smallest noise level with enough hits.
    pub eps_star: Option<f64>,
    pub neg_eps_ln_p: Option<f64>,
    pub beta: Option<f64>,
    pub rel_beta: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub seed: u64,
    pub eps: Vec<f64>,
    pub radii: Option<Radii>,
    /// Equilibrium at the centre of each chain ball.
    pub centers: Vec<usize>,
    pub rho_avoid: f64,
    pub tolerance: f64,
    pub cells: Vec<TransitionCell>,
    pub pairs: Vec<PairSummary>,
}

fn start_state(start: Option<usize>, eq: &EquilibriumSet) -> Result<State> {
    let k = match start {
        Some(k) => k,
        None => eq
            .stable_indices()
            .first()
            .copied()
            .ok_or_else(|| Error::InvalidState("no stable equilibrium to start from".into()))?,
    };
    eq.equilibria
        .get(k)
        .map(|e| e.state.clone())
        .ok_or_else(|| Error::Config(format!("start equilibrium {k} does not exist")))
}

/// One stationary path per noise level, all sharing the same events.
fn occupation_runs(exp: &ExperimentConfig, cfg: &ModelConfig, eq: &EquilibriumSet, events: &[Event]) -> Result<Vec<StationaryEstimate>> {
    let s0 = start_state(exp.sampling.start, eq)?;
    let sp = &exp.sampling;
    fan_out(exp.eps.len(), |k| {
        let opts = StationaryOptions {
            dt: sp.dt,
            burn_in: sp.burn_in,
            total_time: sp.total_time.at(k),
            n_batches: sp.n_batches,
            level: sp.level,
            max_rel_half_width: 0.5,
            seed: exp.seed,
            stream: k as u64,
        };
        estimate_stationary(cfg, &s0, exp.eps[k], events, &opts)
    })
}

fn neg_eps_ln(eps: f64, p: f64) -> f64 {
    if p > 0.0 {
        -eps * p.ln()
    } else {
        f64::INFINITY
    }
}

/// Distance from `x` to the interval `[lo, hi]`.
fn margin(x: f64, lo: f64, hi: f64) -> f64 {
    if x.is_infinite() {
        return if hi.is_infinite() { 0.0 } else { f64::INFINITY };
    }
    if x < lo {
        lo - x
    } else if x > hi {
        x - hi
    } else {
        0.0
    }
}

/// Allowed deviation from a computed rate.
fn band(rate: f64, v: &VerdictParams) -> f64 {
    (v.tolerance * rate).max(v.abs_tolerance)
}

fn fit_rate(cells: &[&LdpCell], errors: &[f64], rate: f64, v: &VerdictParams) -> (usize, Option<(f64, f64, f64)>, Verdict) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for (c, se) in cells.iter().zip(errors) {
        if c.insufficient || !(c.mu_hat > 0.0) {
            continue;
        }
        x.push(-1.0 / c.eps);
        y.push(c.mu_hat.ln());
        let rel = se / c.mu_hat;
        w.push(1.0 / (rel * rel).max(1e-12));
    }
    let n = x.len();
    if n < v.min_points || !rate.is_finite() {
        return (n, None, Verdict::Inconclusive);
    }
    let fit = wls(&x, &y, &w);
    let half = t_quantile(v.level, n - 2) * fit.2;
    let b = band(rate, v);
    let verdict = if !(half <= b) {
        Verdict::Inconclusive
    } else if (fit.1 - rate).abs() <= b {
        Verdict::Consistent
    } else {
        Verdict::Inconsistent
    };
    (n, Some(fit), verdict)
}

fn trend_report(label: &str, eta: f64, eps: &[f64], occ: &[&Occupation], level: f64) -> StabilityReport {
    let mu_hat: Vec<f64> = occ.iter().map(|o| o.fraction).collect();
    let eps_ln_mu: Vec<f64> = eps
        .iter()
        .zip(&mu_hat)
        .map(|(e, m)| if *m > 0.0 { e * m.ln() } else { f64::NEG_INFINITY })
        .collect();
    let s = kendall_s(&eps_ln_mu);
    let n = eps.len();
    let p_up = kendall_upper_p(n, s);
    let p_down = kendall_upper_p(n, -s);
    let alpha = 1.0 - level;
    let verdict = if mu_hat.iter().any(|m| *m == 0.0) {
        Verdict::Inconclusive
    } else if eps_ln_mu.iter().all(|y| *y == 0.0) || p_up <= alpha {
        Verdict::Consistent
    } else if p_down <= alpha {
        Verdict::Inconsistent
    } else {
        Verdict::Inconclusive
    };
    StabilityReport {
        label: label.to_string(),
        eta,
        eps: eps.to_vec(),
        mu_hat,
        ci_low: occ.iter().map(|o| o.interval.low).collect(),
        ci_high: occ.iter().map(|o| o.interval.high).collect(),
        eps_ln_mu,
        kendall_s: s,
        p_value: p_up,
        verdict: Some(verdict),
    }
}

fn equilibrium_neighbourhood(eq: &EquilibriumSet, eta: f64) -> Event {
    Event::Union {
        parts: eq.equilibria.iter().map(|e| Event::ball(e.state.clone(), eta)).collect(),
    }
}

/// Occupation of `g_j = B(u_j, rho1)` on the schedule against the rate function.
///
/// When `neighborhoods.stability_eta` is set, the same paths also feed the
/// stochastic stability trend of the equilibrium set.
pub fn ldp_verify(exp: &ExperimentConfig, pipe: &Pipeline) -> Result<LdpReport> {
    exp.validate()?;
    let cfg = pipe.config()?;
    let eq = &pipe.equilibria;
    let l = eq.len();
    let balls: Vec<usize> = exp.neighborhoods.balls.clone().unwrap_or_else(|| (0..l).collect());
    if let Some(&bad) = balls.iter().find(|&&j| j >= l) {
        return Err(Error::Config(format!("ball {bad} names no equilibrium")));
    }
    let rho = exp.neighborhoods.radii.rho1;
    let mut events: Vec<Event> = balls.iter().map(|&j| Event::ball(eq.equilibria[j].state.clone(), rho)).collect();
    if let Some(eta) = exp.neighborhoods.stability_eta {
        events.push(equilibrium_neighbourhood(eq, eta));
    }
    let runs = occupation_runs(exp, &cfg, eq, &events)?;

    let mut cells = Vec::new();
    let mut errors = Vec::new();
    for (b, &j) in balls.iter().enumerate() {
        let rate = pipe.rate.rate[j];
        for run in &runs {
            let o = &run.occupations[b];
            let lo = neg_eps_ln(run.eps, o.interval.high);
            let hi = neg_eps_ln(run.eps, o.interval.low);
            cells.push(LdpCell {
                ball: b,
                equilibrium: j,
                eps: run.eps,
                mu_hat: o.fraction,
                ci_low: o.interval.low,
                ci_high: o.interval.high,
                hits: o.hits,
                neg_eps_ln_mu: (o.fraction > 0.0).then(|| neg_eps_ln(run.eps, o.fraction)),
                neg_eps_ln_low: lo,
                neg_eps_ln_high: hi,
                rate,
                beta: margin(rate, lo, hi),
                insufficient: o.insufficient,
            });
            errors.push(o.interval.std_err);
        }
    }
    let n_eps = runs.len();
    let summaries = balls
        .iter()
        .enumerate()
        .map(|(b, &j)| {
            let own: Vec<&LdpCell> = cells[b * n_eps..(b + 1) * n_eps].iter().collect();
            let rate = pipe.rate.rate[j];
            let (points, fit, verdict) = fit_rate(&own, &errors[b * n_eps..(b + 1) * n_eps], rate, &exp.verdict);
            let slope = fit.map(|f| f.1);
            BallSummary {
                ball: b,
                equilibrium: j,
                stable: pipe.rate.stable[j],
                rate,
                rate_stable_only: pipe.rate.rate_stable_only[j],
                points,
                slope,
                slope_se: fit.map(|f| f.2),
                intercept: fit.map(|f| f.0),
                rel_deviation: slope.filter(|_| rate > 0.0 && rate.is_finite()).map(|s| (s - rate).abs() / rate),
                beta: own.iter().map(|c| c.beta).fold(0.0, f64::max),
                verdict,
            }
        })
        .collect();
    let stability = exp.neighborhoods.stability_eta.map(|eta| {
        let occ: Vec<&Occupation> = runs.iter().map(|r| &r.occupations[balls.len()]).collect();
        trend_report("equilibria", eta, &exp.eps, &occ, exp.verdict.level)
    });
    Ok(LdpReport {
        seed: exp.seed,
        eps: exp.eps.clone(),
        radius: rho,
        tolerance: exp.verdict.tolerance,
        cells,
        balls: summaries,
        stability,
    })
}

/// Trend of `eps ln mu(E_eta)` for the `eta`-neighbourhood of the equilibria.
pub fn stochastic_stability_check(exp: &ExperimentConfig, pipe: &Pipeline, eta: f64) -> Result<StabilityReport> {
    let ev = equilibrium_neighbourhood(&pipe.equilibria, eta);
    event_trend(exp, pipe, &ev, "equilibria", eta)
}

/// Trend of `eps ln mu(A)` on the schedule for an arbitrary set `A`.
pub fn event_trend(exp: &ExperimentConfig, pipe: &Pipeline, event: &Event, label: &str, eta: f64) -> Result<StabilityReport> {
    exp.validate()?;
    let cfg = pipe.config()?;
    let runs = occupation_runs(exp, &cfg, &pipe.equilibria, std::slice::from_ref(event))?;
    let occ: Vec<&Occupation> = runs.iter().map(|r| &r.occupations[0]).collect();
    Ok(trend_report(label, eta, &exp.eps, &occ, exp.verdict.level))
}

/// Chain balls: all equilibria, or the stable ones only.
pub fn chain_centers(exp: &ExperimentConfig, pipe: &Pipeline) -> Vec<usize> {
    if exp.neighborhoods.stable_only {
        pipe.equilibria.stable_indices()
    } else {
        (0..pipe.equilibria.len()).collect()
    }
}

/// `V~(u_i, u_j)` between chain balls: paths may not touch the other balls.
///
/// Without other balls this is the closed quasipotential.
pub fn v_tilde(exp: &ExperimentConfig, pipe: &Pipeline, centers: &[usize], i: usize, j: usize) -> Result<(f64, String)> {
    let (ei, ej) = (centers[i], centers[j]);
    let forbidden: Vec<State> = (0..centers.len())
        .filter(|&k| k != i && k != j)
        .map(|k| pipe.equilibria.equilibria[centers[k]].state.clone())
        .collect();
    if forbidden.is_empty() {
        return Ok((pipe.closed.get(ei, ej), pipe.closed.provenance(ei, ej).to_string()));
    }
    let cfg = pipe.config()?;
    let rho = exp.neighborhoods.rho_avoid.unwrap_or(exp.neighborhoods.radii.rho1);
    let r = quasipotential_avoiding(
        &cfg,
        &pipe.equilibria.equilibria[ei].state,
        &pipe.equilibria.equilibria[ej].state,
        &forbidden,
        rho,
        &exp.mam,
    )?;
    Ok((r.value, format!("mam-avoiding:{ei}->{ej}:eta={}", r.eta)))
}

/// `-eps ln P~` from the boundary chain against `V~` for each pair of chain balls.
pub fn transition_vs_vtilde(exp: &ExperimentConfig, pipe: &Pipeline, pairs: &[(usize, usize)]) -> Result<TransitionReport> {
    exp.validate()?;
    let cfg = pipe.config()?;
    let centers = chain_centers(exp, pipe);
    let m = centers.len();
    let pairs: Vec<(usize, usize)> = if pairs.is_empty() {
        (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))).collect()
    } else {
        pairs.to_vec()
    };
    for &(i, j) in &pairs {
        if i == j || i >= m || j >= m {
            return Err(Error::Config(format!("pair ({i}, {j}) is not a pair of distinct chain balls")));
        }
    }
    let states: Vec<State> = centers.iter().map(|&k| pipe.equilibria.equilibria[k].state.clone()).collect();
    let ns = NeighborhoodSystem::new(&cfg, states, None, exp.neighborhoods.radii)?;
    let eps: Vec<f64> = exp.chain.eps.clone().unwrap_or_else(|| exp.eps.clone());
    let n_eps = eps.len();
    let vt: Vec<(f64, String)> = pairs
        .iter()
        .map(|&(i, j)| v_tilde(exp, pipe, &centers, i, j))
        .collect::<Result<_>>()?;
    let c = &exp.chain;
    let estimates = fan_out(pairs.len() * n_eps, |cell| {
        let (p, k) = (cell / n_eps, cell % n_eps);
        let (i, j) = pairs[p];
        let opts = ChainOptions {
            dt: c.dt,
            max_steps: c.max_steps,
            seed: exp.seed,
            stream: CHAIN_STREAM_BASE + cell as u64,
            refine_tol: 1e-3,
        };
        estimate_transition(&cfg, &ns, &eps[k..k + 1], i, j, c.samples, &opts).map(|mut v| v.remove(0))
    })?;
    let mut cells = Vec::with_capacity(estimates.len());
    let mut summaries = Vec::with_capacity(pairs.len());
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let (vt_value, source) = vt[p].clone();
        let own = &estimates[p * n_eps..(p + 1) * n_eps];
        let mut star: Option<usize> = None;
        for (k, e) in own.iter().enumerate() {
            let resolved = e.hits >= c.min_hits;
            if resolved {
                star = Some(k);
            }
            cells.push(TransitionCell {
                from: i,
                to: j,
                eps: e.eps,
                trials: e.trials,
                hits: e.hits,
                p_hat: e.p_hat,
                ci_low: e.ci.0,
                ci_high: e.ci.1,
                neg_eps_ln_p: e.neg_eps_ln_p,
                neg_eps_ln_low: e.neg_eps_ln_ci.0,
                neg_eps_ln_high: e.neg_eps_ln_ci.1,
                v_tilde: vt_value,
                beta: e.neg_eps_ln_p.map(|x| (x - vt_value).abs()),
                resolved,
                partial: e.partial,
            });
        }
        let at = star.map(|k| &own[k]);
        let value = at.and_then(|e| e.neg_eps_ln_p);
        let beta = value.map(|x| (x - vt_value).abs());
        let verdict = match beta {
            Some(b) if vt_value.is_finite() => {
                if b <= band(vt_value, &exp.verdict) {
                    Verdict::Consistent
                } else {
                    Verdict::Inconsistent
                }
            }
            _ => Verdict::Inconclusive,
        };
        summaries.push(PairSummary {
            from: i,
            to: j,
            from_equilibrium: centers[i],
            to_equilibrium: centers[j],
            v_tilde: vt_value,
            v_tilde_source: source,
            eps_star: at.map(|e| e.eps),
            neg_eps_ln_p: value,
            beta,
            rel_beta: beta.filter(|_| vt_value > 0.0 && vt_value.is_finite()).map(|b| b / vt_value),
            verdict,
        });
    }
    Ok(TransitionReport {
        seed: exp.seed,
        eps,
        radii: Some(exp.neighborhoods.radii),
        centers,
        rho_avoid: exp.neighborhoods.rho_avoid.unwrap_or(exp.neighborhoods.radii.rho1),
        tolerance: exp.verdict.tolerance,
        cells,
        pairs: summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fan_out_keeps_order() {
        let v = fan_out(17, |k| Ok(k * k)).unwrap();
        assert_eq!(v, (0..17).map(|k| k * k).collect::<Vec<_>>());
        assert!(fan_out(3, |k| if k == 1 { Err(Error::Budget(k)) } else { Ok(k) }).is_err());
    }

    #[test]
    fn margin_is_distance_to_interval() {
        assert_eq!(margin(1.0, 0.5, 2.0), 0.0);
        assert_eq!(margin(0.2, 0.5, 2.0), 0.3);
        assert_eq!(margin(3.0, 0.5, 2.0), 1.0);
        assert_eq!(margin(f64::INFINITY, 0.5, f64::INFINITY), 0.0);
    }

    #[test]
    fn trend_verdicts() {
        let occ = |x: f64| Occupation {
            fraction: x,
            interval: crate::stats::Interval {
                mean: x,
                std_err: 0.0,
                low: x,
                high: x,
            },
            hits: 1,
            insufficient: false,
        };
        let eps = [0.4, 0.3, 0.2, 0.1];
        let up: Vec<Occupation> = [0.05, 0.1, 0.2, 0.4].into_iter().map(occ).collect();
        let r = trend_report("t", 0.3, &eps, &up.iter().collect::<Vec<_>>(), 0.95);
        assert_eq!(r.verdict, Some(Verdict::Consistent));
        let down: Vec<Occupation> = [0.4, 0.1, 0.01, 1e-4].into_iter().map(occ).collect();
        let r = trend_report("t", 0.3, &eps, &down.iter().collect::<Vec<_>>(), 0.95);
        assert_eq!(r.verdict, Some(Verdict::Inconsistent));
        let whole: Vec<Occupation> = [1.0; 4].into_iter().map(occ).collect();
        let r = trend_report("t", 0.3, &eps, &whole.iter().collect::<Vec<_>>(), 0.95);
        assert_eq!(r.verdict, Some(Verdict::Consistent));
        assert!(r.eps_ln_mu.iter().all(|y| *y == 0.0));
    }
}
