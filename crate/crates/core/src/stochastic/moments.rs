use serde::{Deserialize, Serialize};

use super::Simulator;
use crate::dynamics::ModelConfig;
use crate::error::{Error, Result};
use crate::spectral::{energy, State};
use crate::stats::{mean_interval, ols};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentOptions {
    pub replicas: usize,
    pub dt: f64,
    /// Time between recorded points of the series.
    pub sample_interval: f64,
    /// Leading part of `[0, T]` excluded from the trend test.
    pub burn_in: f64,
    pub seed: u64,
    /// Start of every replica; the origin when absent.
    pub start: Option<State>,
    pub level: f64,
    /// Halvings of `kappa` allowed after an overflow.
    pub max_reductions: usize,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self {
            replicas: 64,
            dt: 0.01,
            sample_interval: 1.0,
            burn_in: 20.0,
            seed: 0,
            start: None,
            level: 0.95,
            max_reductions: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub eps: f64,
    pub kappa_requested: f64,
    pub kappa: f64,
    /// `alpha / (2 eps B)`.
    pub kappa_threshold: f64,
    /// Number of halvings of `kappa` forced by overflow.
    pub reductions: usize,
    pub times: Vec<f64>,
    /// Ensemble mean of `exp(kappa E(v(t)))`.
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Mean over replicas of the post-burn-in OLS slope, and its error.
    pub slope: f64,
    pub slope_se: f64,
    /// Upper one-sided confidence bound on the slope is not positive.
    pub bounded: bool,
}

const OVERFLOW: f64 = 1e250;

fn run_replicas(cfg: &ModelConfig, eps: f64, kappa: f64, t: f64, opts: &MomentOptions) -> Result<Option<(Vec<f64>, Vec<Vec<f64>>)>> {
    let n = cfg.n_modes();
    let s0 = opts.start.clone().unwrap_or_else(|| State::zeros(n));
    let every = ((opts.sample_interval / opts.dt).round() as u64).max(1);
    let n_steps = ((t / opts.dt).round() as u64).max(every);
    let n_points = (n_steps / every) as usize + 1;
    let mut times = Vec::with_capacity(n_points);
    let mut values = Vec::with_capacity(opts.replicas);
    for r in 0..opts.replicas {
        let mut sim = Simulator::new(cfg, &s0, eps, opts.dt, opts.seed, r as u64)?;
        let mut series = Vec::with_capacity(n_points);
        let e0 = (kappa * energy(&s0, cfg)?).exp();
        if !(e0 < OVERFLOW) {
            return Ok(None);
        }
        series.push(e0);
        if r == 0 {
            times.push(0.0);
        }
        for k in 1..=n_steps {
            sim.advance()?;
            if k % every == 0 {
                let x = match energy(sim.state(), cfg) {
                    Ok(e) => (kappa * e).exp(),
                    Err(_) => f64::INFINITY,
                };
                if !(x < OVERFLOW) {
                    return Ok(None);
                }
                series.push(x);
                if r == 0 {
                    times.push(sim.time());
                }
            }
        }
        values.push(series);
    }
    Ok(Some((times, values)))
}

/// Ensemble series of `E exp(kappa E(v(t)))` on `[0, T]` with a trend verdict.
///
/// `kappa` is halved until no sample overflows.
pub fn exponential_moment_check(cfg: &ModelConfig, eps: f64, kappa: f64, t: f64, opts: &MomentOptions) -> Result<MomentSeries> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!("kappa {kappa}")));
    }
    if !(t > opts.burn_in) || opts.replicas < 2 {
        return Err(Error::InvalidArgument("need T > burn_in and at least two replicas".into()));
    }
    let threshold = cfg.alpha() / (2.0 * eps * cfg.noise().total_variance());
    if kappa > threshold * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "kappa {kappa} exceeds the admissible threshold {threshold}"
        )));
    }
    let mut k = kappa;
    let mut reductions = 0;
    let (times, values) = loop {
        if let Some(out) = run_replicas(cfg, eps, k, t, opts)? {
            break out;
        }
        if reductions == opts.max_reductions {
            return Err(Error::Range(format!("exp(kappa E) overflows even at kappa = {k}")));
        }
        k *= 0.5;
        reductions += 1;
    };
    let n_points = times.len();
    let mut mean = Vec::with_capacity(n_points);
    let mut std_err = Vec::with_capacity(n_points);
    for p in 0..n_points {
        let col: Vec<f64> = values.iter().map(|v| v[p]).collect();
        let iv = mean_interval(&col, opts.level);
        mean.push(iv.mean);
        std_err.push(iv.std_err);
    }
    let first = times.iter().position(|&s| s >= opts.burn_in).unwrap_or(n_points);
    let tail = &times[first..];
    let slopes: Vec<f64> = if tail.len() >= 3 {
        values.iter().map(|v| ols(tail, &v[first..]).1).collect()
    } else {
        vec![0.0; values.len()]
    };
    let iv = mean_interval(&slopes, opts.level);
    let (slope, slope_se) = if slopes.iter().all(|s| *s == 0.0) { (0.0, 0.0) } else { (iv.mean, iv.std_err) };
    // one-sided test of a positive trend
    let z = crate::stats::t_quantile(2.0 * opts.level - 1.0, slopes.len() - 1);
    Ok(MomentSeries {
        eps,
        kappa_requested: kappa,
        kappa: k,
        kappa_threshold: threshold,
        reductions,
        times,
        mean,
        std_err,
        slope,
        slope_se,
        bounded: slope - z * slope_se <= 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{find_equilibria, NonlinearitySpec};
    use crate::spectral::NoiseSpec;

    #[test]
    fn zero_kappa_is_identically_one() {
        let cfg = ModelConfig::double_well();
        let opts = MomentOptions {
            replicas: 3,
            burn_in: 1.0,
            ..Default::default()
        };
        let m = exponential_moment_check(&cfg, 0.1, 0.0, 3.0, &opts).unwrap();
        assert!(m.mean.iter().all(|x| *x == 1.0));
        assert!(m.bounded);
    }

    #[test]
    fn noiseless_series_is_constant_at_well() {
        let cfg = ModelConfig::double_well();
        let u = find_equilibria(&cfg).unwrap().equilibria[2].state.clone();
        let kappa = 0.1;
        let opts = MomentOptions {
            replicas: 2,
            burn_in: 1.0,
            start: Some(u.clone()),
            ..Default::default()
        };
        // eps = 0 makes the threshold infinite
        let m = exponential_moment_check(&cfg, 0.0, kappa, 4.0, &opts).unwrap();
        let e = (kappa * energy(&u, &cfg).unwrap()).exp();
        assert!(m.mean.iter().all(|x| (x - e).abs() < 1e-9 * e));
    }

    #[test]
    fn rejects_kappa_above_threshold() {
        let cfg = ModelConfig::new(0.5, NonlinearitySpec::Zero, vec![], 1, NoiseSpec::new(vec![1.0], "explicit").unwrap()).unwrap();
        let th = cfg.alpha() / (2.0 * 0.1);
        assert!(exponential_moment_check(&cfg, 0.1, 2.0 * th, 30.0, &MomentOptions::default()).is_err());
    }
}
