use serde::{Deserialize, Serialize};

use super::equilibria::EquilibriumSet;
use super::stepper::Integrator;
use super::ModelConfig;
use crate::error::Result;
use crate::spectral::State;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanOptions {
    /// H-size of the initial kick along an unstable direction.
    pub delta: f64,
    pub dt: f64,
    pub horizon: f64,
    /// Arrival radius around the terminal equilibrium.
    pub radius: f64,
    /// Keep every `stride`-th state as a waypoint.
    pub stride: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            dt: 0.01,
            horizon: 400.0,
            radius: 1e-4,
            stride: 20,
        }
    }
}

/// An integrated branch of the unstable manifold of `from`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub from: usize,
    /// `None` when the branch did not settle within the horizon.
    pub to: Option<usize>,
    pub direction: usize,
    pub sign: i8,
    pub arrival_time: Option<f64>,
    pub waypoints: Vec<State>,
}

/// Follow `u_k +- delta w` for every unstable equilibrium `u_k` and
/// eigendirection `w` until the flow settles at some equilibrium.
pub fn heteroclinic_scan(eq: &EquilibriumSet, cfg: &ModelConfig, opts: &ScanOptions) -> Result<Vec<Connection>> {
    let basis = cfg.basis();
    let alpha = cfg.alpha();
    let states = eq.states();
    let n_steps = (opts.horizon / opts.dt).ceil() as usize;
    let mut it = Integrator::new(cfg, opts.dt)?;
    let mut out = Vec::new();
    for (k, e) in eq.equilibria.iter().enumerate() {
        for (d, (_, w)) in e.spectrum.unstable_directions.iter().enumerate() {
            for sign in [1i8, -1] {
                let mut s = e.state.offset(w, sign as f64 * opts.delta);
                let mut waypoints = vec![s.clone()];
                let mut left = false;
                let mut to = None;
                let mut arrival_time = None;
                for step in 1..=n_steps {
                    it.step(&mut s);
                    let t = step as f64 * opts.dt;
                    it.check(&s, t)?;
                    if step % opts.stride.max(1) == 0 {
                        waypoints.push(s.clone());
                    }
                    if !left && basis.distance_h(&s, &e.state, alpha) > 2.0 * opts.delta {
                        left = true;
                    }
                    let hit = states
                        .iter()
                        .enumerate()
                        .find(|(j, u)| (*j != k || left) && basis.distance_h(&s, u, alpha) < opts.radius);
                    if let Some((j, _)) = hit {
                        to = Some(j);
                        arrival_time = Some(t);
                        waypoints.push(s.clone());
                        break;
                    }
                }
                out.push(Connection {
                    from: k,
                    to,
                    direction: d,
                    sign,
                    arrival_time,
                    waypoints,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{find_equilibria, NonlinearitySpec};
    use crate::spectral::NoiseSpec;

    #[test]
    fn double_well_origin_connects_to_both_wells() {
        let cfg = ModelConfig::double_well();
        let eq = find_equilibria(&cfg).unwrap();
        let c = heteroclinic_scan(&eq, &cfg, &ScanOptions::default()).unwrap();
        assert_eq!(c.len(), 2);
        let mut ends: Vec<usize> = c.iter().map(|x| x.to.unwrap()).collect();
        ends.sort();
        assert_eq!(ends, vec![0, 2]);
        assert!(c.iter().all(|x| x.from == 1));
    }

    #[test]
    fn single_stable_equilibrium_has_no_connections() {
        let cfg = ModelConfig::new(0.5, NonlinearitySpec::Cubic { kappa: 0.5 }, vec![], 4, NoiseSpec::default_for(4))
            .unwrap();
        let eq = find_equilibria(&cfg).unwrap();
        assert_eq!(eq.len(), 1);
        assert!(heteroclinic_scan(&eq, &cfg, &ScanOptions::default()).unwrap().is_empty());
    }
}
