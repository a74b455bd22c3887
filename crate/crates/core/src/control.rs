use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::NoiseSpec;

/// Piecewise-constant control on `[0, T]` in the span of the first `n_modes` eigenmodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    horizon: f64,
    n_intervals: usize,
    n_modes: usize,
    /// Row-major, one row of `n_modes` coefficients per interval.
    coeffs: Vec<f64>,
}

impl ControlPath {
    pub fn zeros(horizon: f64, n_intervals: usize, n_modes: usize) -> Result<Self> {
        Self::new(horizon, n_intervals, n_modes, vec![0.0; n_intervals * n_modes])
    }

    pub fn new(horizon: f64, n_intervals: usize, n_modes: usize, coeffs: Vec<f64>) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("control horizon {horizon}")));
        }
        if n_intervals == 0 || n_modes == 0 {
            return Err(Error::InvalidArgument("control grid must be nonempty".into()));
        }
        if coeffs.len() != n_intervals * n_modes {
            return Err(Error::SizeMismatch {
                expected: n_intervals * n_modes,
                got: coeffs.len(),
            });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidState("non-finite control coefficient".into()));
        }
        Ok(Self {
            horizon,
            n_intervals,
            n_modes,
            coeffs,
        })
    }

    /// Constant control `values` on the whole horizon.
    pub fn constant(horizon: f64, values: &[f64]) -> Result<Self> {
        Self::new(horizon, 1, values.len(), values.to_vec())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn n_intervals(&self) -> usize {
        self.n_intervals
    }
    pub fn n_modes(&self) -> usize {
        self.n_modes
    }
    pub fn interval_length(&self) -> f64 {
        self.horizon / self.n_intervals as f64
    }
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn interval(&self, k: usize) -> &[f64] {
        &self.coeffs[k * self.n_modes..(k + 1) * self.n_modes]
    }

    /// Left endpoints of the control intervals.
    pub fn t_grid(&self) -> Vec<f64> {
        let h = self.interval_length();
        (0..self.n_intervals).map(|k| k as f64 * h).collect()
    }

    /// Value at time `t` (right-continuous, last interval closed).
    pub fn at(&self, t: f64) -> &[f64] {
        let k = ((t / self.interval_length()).floor().max(0.0) as usize).min(self.n_intervals - 1);
        self.interval(k)
    }

    /// Same control re-expressed on `k` times as many intervals.
    pub fn refined(&self, k: usize) -> Self {
        let mut coeffs = Vec::with_capacity(self.coeffs.len() * k);
        for i in 0..self.n_intervals {
            for _ in 0..k {
                coeffs.extend_from_slice(self.interval(i));
            }
        }
        Self {
            horizon: self.horizon,
            n_intervals: self.n_intervals * k,
            n_modes: self.n_modes,
            coeffs,
        }
    }

    /// Time-concatenation `self` then `other`; both must use the same interval length and modes.
    pub fn concat(&self, other: &ControlPath) -> Result<Self> {
        if self.n_modes != other.n_modes {
            return Err(Error::SizeMismatch {
                expected: self.n_modes,
                got: other.n_modes,
            });
        }
        let mut coeffs = self.coeffs.clone();
        coeffs.extend_from_slice(&other.coeffs);
        Self::new(
            self.horizon + other.horizon,
            self.n_intervals + other.n_intervals,
            self.n_modes,
            coeffs,
        )
    }

    /// `J_T = 1/2 int |phi|^2_{H_theta} dt` with piecewise-constant quadrature.
    pub fn action(&self, noise: &NoiseSpec) -> f64 {
        let h = self.interval_length();
        let mut acc = 0.0;
        for k in 0..self.n_intervals {
            for (x, b) in self.interval(k).iter().zip(&noise.b) {
                acc += x * x / (b * b);
            }
        }
        0.5 * h * acc
    }

    /// `int_0^t ||phi||^2_{L2} ds` at every interval end.
    pub fn cumulative_l2(&self) -> Vec<f64> {
        let h = self.interval_length();
        let mut acc = 0.0;
        (0..self.n_intervals)
            .map(|k| {
                acc += h * self.interval(k).iter().map(|x| x * x).sum::<f64>();
                acc
            })
            .collect()
    }
}

/// `J_T(phi)`.
pub fn action_j(phi: &ControlPath, noise: &NoiseSpec) -> Result<f64> {
    if phi.n_modes() > noise.len() {
        return Err(Error::SizeMismatch {
            expected: noise.len(),
            got: phi.n_modes(),
        });
    }
    Ok(phi.action(noise))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_constant_action() {
        let noise = NoiseSpec::power_law(3, 2.0, 0.7).unwrap();
        let z = ControlPath::zeros(2.0, 5, 3).unwrap();
        assert_eq!(action_j(&z, &noise).unwrap(), 0.0);
        let c = ControlPath::constant(1.0, &[1.0]).unwrap();
        let j = action_j(&c, &noise).unwrap();
        assert!((j - 1.0 / (2.0 * 0.49)).abs() < 1e-14);
    }

    #[test]
    fn doubling_noise_quarters_action() {
        let phi = ControlPath::new(1.5, 3, 2, vec![0.3, -1.0, 2.0, 0.1, 0.0, 0.7]).unwrap();
        let n1 = NoiseSpec::new(vec![0.5, 0.25], "x").unwrap();
        let n2 = NoiseSpec::new(vec![1.0, 0.5], "x").unwrap();
        assert_eq!(phi.action(&n2) * 4.0, phi.action(&n1));
    }

    #[test]
    fn refine_and_lookup() {
        let phi = ControlPath::new(2.0, 2, 1, vec![1.0, 2.0]).unwrap();
        let r = phi.refined(3);
        assert_eq!(r.n_intervals(), 6);
        assert_eq!(r.at(0.9)[0], 1.0);
        assert_eq!(r.at(1.1)[0], 2.0);
        assert_eq!(r.at(2.0)[0], 2.0);
        let noise = NoiseSpec::new(vec![0.3], "x").unwrap();
        assert!((r.action(&noise) - phi.action(&noise)).abs() < 1e-14);
        assert!(ControlPath::new(1.0, 1, 1, vec![f64::NAN]).is_err());
        assert!(ControlPath::new(0.0, 1, 1, vec![0.0]).is_err());
    }
}
