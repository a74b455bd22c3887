use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::action::MamOptions;
use crate::dynamics::{ModelParams, ScanOptions};
use crate::error::{Error, Result};
use crate::stochastic::Radii;

pub const SCHEMA_VERSION: u32 = 1;

/// Sampling budget given once for every `eps` or once per entry of the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budget {
    Uniform(f64),
    PerEps(Vec<f64>),
}

impl Budget {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            Budget::Uniform(x) => *x,
            Budget::PerEps(v) => v[k],
        }
    }

    fn check(&self, n_eps: usize, what: &str) -> Result<()> {
        let ok = match self {
            Budget::Uniform(x) => *x > 0.0 && x.is_finite(),
            Budget::PerEps(v) => v.len() == n_eps && v.iter().all(|x| *x > 0.0 && x.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{what} must be positive, given once or once per eps"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeighborhoodParams {
    pub radii: Radii,
    /// Centre the boundary chain on the stable equilibria only.
    pub stable_only: bool,
    /// Equilibria whose balls `B(u_j, rho1)` enter the occupation report; all when absent.
    pub balls: Option<Vec<usize>>,
    /// Radius of the neighbourhood of the equilibrium set tracked for stochastic stability.
    pub stability_eta: Option<f64>,
    /// Radius of the balls avoided by the paths defining `V~`; `rho1` when absent.
    pub rho_avoid: Option<f64>,
}

impl Default for NeighborhoodParams {
    fn default() -> Self {
        Self {
            radii: Radii {
                rho1_prime: 0.1,
                rho0_prime: 0.2,
                rho1: 0.4,
                rho0: 0.6,
                rho_star: 0.9,
            },
            stable_only: false,
            balls: None,
            stability_eta: None,
            rho_avoid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingParams {
    pub dt: f64,
    pub burn_in: f64,
    /// Length of the single path sampled at each `eps`.
    pub total_time: Budget,
    pub n_batches: usize,
    pub level: f64,
    /// Equilibrium the paths start from; the first stable one when absent.
    pub start: Option<usize>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            dt: 0.02,
            burn_in: 100.0,
            total_time: Budget::Uniform(1e4),
            n_batches: 20,
            level: 0.95,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainParams {
    /// Ordered pairs of chain balls; all ordered pairs when empty.
    pub pairs: Vec<(usize, usize)>,
    /// Transitions sampled from each starting boundary per `eps`.
    pub samples: u64,
    pub dt: f64,
    pub max_steps: u64,
    /// Hits required before a cell counts as resolved.
    pub min_hits: u64,
    /// Noise intensities of the chain; the main schedule when absent.
    pub eps: Option<Vec<f64>>,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            samples: 1000,
            dt: 0.02,
            max_steps: 100_000_000,
            min_hits: 10,
            eps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub horizon: f64,
    pub dt: f64,
    pub stride: usize,
    /// Noise intensity; the first entry of the schedule when absent.
    pub eps: Option<f64>,
    pub start: Option<usize>,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            horizon: 100.0,
            dt: 0.01,
            stride: 10,
            eps: None,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerdictParams {
    /// Allowed relative deviation between estimated and computed rates.
    pub tolerance: f64,
    /// Absolute floor of the allowed deviation, used when the rate vanishes.
    pub abs_tolerance: f64,
    /// Resolved noise levels needed for a slope.
    pub min_points: usize,
    pub level: f64,
}

impl Default for VerdictParams {
    fn default() -> Self {
        Self {
            tolerance: 0.3,
            abs_tolerance: 0.05,
            min_points: 3,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputParams {
    pub dir: PathBuf,
    /// Precomputed equilibria and quasipotentials reused instead of recomputed.
    pub pipeline: Option<PathBuf>,
}

impl Default for OutputParams {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            pipeline: None,
        }
    }
}

/// Everything one experiment needs, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelParams,
    /// Noise intensities, strictly decreasing.
    pub eps: Vec<f64>,
    #[serde(default)]
    pub neighborhoods: NeighborhoodParams,
    #[serde(default)]
    pub sampling: SamplingParams,
    #[serde(default)]
    pub chain: ChainParams,
    #[serde(default)]
    pub mam: MamOptions,
    #[serde(default)]
    pub scan: ScanOptions,
    #[serde(default)]
    pub simulate: SimulateParams,
    #[serde(default)]
    pub verdict: VerdictParams,
    #[serde(default)]
    pub output: OutputParams,
}

fn check_schedule(eps: &[f64], what: &str) -> Result<()> {
    if eps.is_empty() {
        return Err(Error::Config(format!("{what} is empty")));
    }
    if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::Config(format!("{what} must be positive: {eps:?}")));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config(format!("{what} must be strictly decreasing: {eps:?}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = toml::from_str(&s).map_err(|e| Error::ser(path, e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        check_schedule(&self.eps, "eps schedule")?;
        if let Some(e) = &self.chain.eps {
            check_schedule(e, "chain eps schedule")?;
        }
        let n = self.eps.len();
        self.sampling.total_time.check(n, "sampling.total_time")?;
        let s = &self.sampling;
        if !(s.dt > 0.0) || !(s.burn_in >= 0.0) || s.n_batches < 2 || !(s.level > 0.0 && s.level < 1.0) {
            return Err(Error::Config("sampling needs dt > 0, burn_in >= 0, n_batches >= 2, level in (0, 1)".into()));
        }
        let c = &self.chain;
        if c.samples == 0 || c.max_steps == 0 || !(c.dt > 0.0) {
            return Err(Error::Config("chain budgets must be positive".into()));
        }
        if c.pairs.iter().any(|(i, j)| i == j) {
            return Err(Error::Config("chain pairs must join distinct balls".into()));
        }
        let v = &self.verdict;
        if !(v.tolerance > 0.0) || !(v.abs_tolerance >= 0.0) || v.min_points < 3 || !(v.level > 0.0 && v.level < 1.0) {
            return Err(Error::Config("verdict needs tolerance > 0, min_points >= 3, level in (0, 1)".into()));
        }
        if let Some(eta) = self.neighborhoods.stability_eta {
            if !(eta > 0.0) {
                return Err(Error::Config(format!("stability_eta {eta}")));
            }
        }
        if let Some(r) = self.neighborhoods.rho_avoid {
            if !(r > 0.0) {
                return Err(Error::Config(format!("rho_avoid {r}")));
            }
        }
        if !(self.simulate.horizon > 0.0 && self.simulate.dt > 0.0) {
            return Err(Error::Config("simulate needs horizon > 0 and dt > 0".into()));
        }
        self.mam.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Double-well demo on the default schedule.
    pub fn double_well() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            model: ModelParams {
                gamma: 0.5,
                alpha: None,
                nonlinearity: crate::dynamics::NonlinearitySpec::Cubic { kappa: 2.5 },
                h: Vec::new(),
                n_modes: 8,
                domain_length: None,
                noise: crate::dynamics::NoiseParams::PowerLaw {
                    exponent: 2.0,
                    scale: crate::dynamics::DOUBLE_WELL_NOISE_SCALE,
                },
                ceiling: None,
            },
            eps: vec![0.30, 0.20, 0.12, 0.08],
            neighborhoods: NeighborhoodParams::default(),
            sampling: SamplingParams::default(),
            chain: ChainParams::default(),
            mam: MamOptions::default(),
            scan: ScanOptions::default(),
            simulate: SimulateParams::default(),
            verdict: VerdictParams::default(),
            output: OutputParams::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
eps = [0.3, 0.2, 0.1]

[model]
gamma = 0.5
n_modes = 4
nonlinearity = { kind = "cubic", kappa = 2.5 }
"#;

    #[test]
    fn minimal_file_fills_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.sampling, SamplingParams::default());
        assert_eq!(c.neighborhoods.radii.rho1, 0.4);
    }

    #[test]
    fn rejects_bad_schedules_and_versions() {
        let up = MINIMAL.replace("[0.3, 0.2, 0.1]", "[0.1, 0.2]");
        assert!(ExperimentConfig::from_toml_str(&up).is_err());
        let neg = MINIMAL.replace("[0.3, 0.2, 0.1]", "[0.3, -0.1]");
        assert!(ExperimentConfig::from_toml_str(&neg).is_err());
        let v2 = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(ExperimentConfig::from_toml_str(&v2).is_err());
        let unknown = format!("{MINIMAL}\n[sampling]\nbogus = 1\n");
        assert!(ExperimentConfig::from_toml_str(&unknown).is_err());
        let budget = format!("{MINIMAL}\n[sampling]\ntotal_time = [1.0, 2.0]\n");
        assert!(ExperimentConfig::from_toml_str(&budget).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::double_well();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
