//! Sample paths of the stochastically forced equation and the Monte Carlo
//! estimators built on them: occupation fractions of the stationary measure,
//! the boundary chain between neighbourhoods of equilibria, and exponential
//! moments of the energy and of exit times.

mod chain;
mod moments;

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Integrator, ModelConfig, Trajectory};
use crate::error::{Error, Result};
use crate::spectral::{SpectralBasis, State};
use crate::stats::{mean_interval, Interval};

pub use chain::{
    boundary_chain_run, estimate_transition, exit_time_moments, ChainEntry, ChainOptions, ChainSample, MgfRow,
    MgfTable, NeighborhoodSystem, Radii, TransitionEstimate,
};
pub use moments::{exponential_moment_check, MomentOptions, MomentSeries};

/// Generator for replica `stream` of a run seeded with `seed`.
///
/// ChaCha8 is counter based, so every `(seed, stream)` pair names one fixed
/// random sequence on every platform.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Stepper for one sample path.
pub struct Simulator<'a> {
    it: Integrator<'a>,
    state: State,
    amp: Vec<f64>,
    rng: ChaCha8Rng,
    noisy: bool,
    steps: u64,
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: &'a ModelConfig, s0: &State, eps: f64, dt: f64, seed: u64, stream: u64) -> Result<Self> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise intensity {eps}")));
        }
        s0.check_len(cfg.n_modes())?;
        s0.check_finite()?;
        let it = Integrator::new(cfg, dt)?;
        let amp = cfg.noise().b.iter().map(|b| eps.sqrt() * b).collect();
        Ok(Self {
            it,
            state: s0.clone(),
            amp,
            rng: rng(seed, stream),
            noisy: eps > 0.0,
            steps: 0,
        })
    }

    pub fn advance(&mut self) -> Result<()> {
        if self.noisy {
            self.it.step_noisy(&mut self.state, &self.amp, &mut self.rng);
        } else {
            self.it.step(&mut self.state);
        }
        self.steps += 1;
        self.it.check(&self.state, self.time())
    }

    /// Move the path to `s`, keeping the random stream and the clock.
    pub fn set_state(&mut self, s: &State) {
        self.state.clone_from(s);
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.it.dt()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.it.dt()
    }
}

/// Sample path on `[0, T]` recorded every `stride` steps (and at `T`).
pub fn simulate(
    cfg: &ModelConfig,
    s0: &State,
    eps: f64,
    t: f64,
    dt: f64,
    seed: u64,
    stride: usize,
) -> Result<Trajectory> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon {t}")));
    }
    let n = ((t / dt) * (1.0 - 1e-12)).ceil().max(1.0) as u64;
    let h = t / n as f64;
    let stride = stride.max(1) as u64;
    let mut sim = Simulator::new(cfg, s0, eps, h, seed, 0)?;
    let mut times = vec![0.0];
    let mut states = vec![s0.clone()];
    for k in 1..=n {
        sim.advance()?;
        if k % stride == 0 || k == n {
            times.push(sim.time());
            states.push(sim.state().clone());
        }
    }
    Ok(Trajectory { times, states })
}

/// Subset of the phase space built from H-balls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    /// Open ball; an infinite radius is the whole space.
    Ball {
        center: State,
        #[serde(with = "crate::graph::inf_serde")]
        radius: f64,
    },
    Union { parts: Vec<Event> },
    Complement { inner: Box<Event> },
}

impl Event {
    pub fn ball(center: State, radius: f64) -> Self {
        Event::Ball { center, radius }
    }

    pub fn whole(n: usize) -> Self {
        Event::Ball {
            center: State::zeros(n),
            radius: f64::INFINITY,
        }
    }

    pub fn contains(&self, basis: &SpectralBasis, alpha: f64, s: &State) -> bool {
        match self {
            Event::Ball { center, radius } => {
                radius.is_infinite() || basis.distance_h(s, center, alpha) < *radius
            }
            Event::Union { parts } => parts.iter().any(|e| e.contains(basis, alpha, s)),
            Event::Complement { inner } => !inner.contains(basis, alpha, s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryOptions {
    pub dt: f64,
    pub burn_in: f64,
    pub total_time: f64,
    pub n_batches: usize,
    pub level: f64,
    /// Flag estimates whose CI half-width exceeds this fraction of the mean.
    pub max_rel_half_width: f64,
    pub seed: u64,
    pub stream: u64,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            dt: 0.01,
            burn_in: 100.0,
            total_time: 10_000.0,
            n_batches: 20,
            level: 0.95,
            max_rel_half_width: 0.5,
            seed: 0,
            stream: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupation {
    pub fraction: f64,
    pub interval: Interval,
    /// Steps spent inside the event.
    pub hits: u64,
    pub insufficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryEstimate {
    pub eps: f64,
    pub steps: u64,
    pub occupations: Vec<Occupation>,
}

/// Time-average occupation of each event along one path after burn-in, with
/// batch-means confidence intervals.
pub fn estimate_stationary(
    cfg: &ModelConfig,
    s0: &State,
    eps: f64,
    events: &[Event],
    opts: &StationaryOptions,
) -> Result<StationaryEstimate> {
    if opts.n_batches < 2 {
        return Err(Error::InvalidArgument("need at least two batches".into()));
    }
    let mut sim = Simulator::new(cfg, s0, eps, opts.dt, opts.seed, opts.stream)?;
    let burn = (opts.burn_in / opts.dt).round() as u64;
    for _ in 0..burn {
        sim.advance()?;
    }
    let per_batch = ((opts.total_time / opts.dt) / opts.n_batches as f64).round().max(1.0) as u64;
    let basis = cfg.basis();
    let alpha = cfg.alpha();
    let mut counts = vec![vec![0u64; opts.n_batches]; events.len()];
    for b in 0..opts.n_batches {
        for _ in 0..per_batch {
            sim.advance()?;
            let s = sim.state();
            for (e, c) in events.iter().zip(counts.iter_mut()) {
                if e.contains(basis, alpha, s) {
                    c[b] += 1;
                }
            }
        }
    }
    let occupations = counts
        .iter()
        .map(|c| {
            let xs: Vec<f64> = c.iter().map(|&k| k as f64 / per_batch as f64).collect();
            let mut interval = mean_interval(&xs, opts.level);
            interval.low = interval.low.max(0.0);
            interval.high = interval.high.min(1.0);
            let hits: u64 = c.iter().sum();
            let insufficient = hits == 0 || interval.half_width() > opts.max_rel_half_width * interval.mean;
            Occupation {
                fraction: interval.mean,
                interval,
                hits,
                insufficient,
            }
        })
        .collect();
    Ok(StationaryEstimate {
        eps,
        steps: per_batch * opts.n_batches as u64,
        occupations,
    })
}

/// Write `t, a_1.., v_1..` rows, one per recorded state.
pub fn write_trajectory_csv(path: &Path, tr: &Trajectory) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let n = tr.states.first().map_or(0, |s| s.n_modes());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|j| format!("a{j}")));
    header.extend((1..=n).map(|j| format!("v{j}")));
    w.write_record(&header).map_err(|e| Error::ser(path, e))?;
    for (t, s) in tr.times.iter().zip(&tr.states) {
        let mut row = vec![format!("{t:.10e}")];
        row.extend(s.position.iter().chain(&s.velocity).map(|x| format!("{x:.17e}")));
        w.write_record(&row).map_err(|e| Error::ser(path, e))?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::ser(path, e))?;
    inner.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
