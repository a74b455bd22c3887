//! Sine eigenbasis of the Dirichlet Laplacian on an interval, modal states,
//! noise coefficients and the phase-space norms built on them.
//!
//! Functions on `(0, L)` are represented by their coefficients in the
//! orthonormal basis `e_j(x) = sqrt(2/L) sin(j pi x / L)` with eigenvalues
//! `lambda_j = (j pi / L)^2`. Pointwise nonlinearities are evaluated on an
//! interior collocation grid whose size makes the projection of a degree-`d`
//! polynomial of a truncated series exact (no aliasing).

use serde::{Deserialize, Serialize};

use crate::dynamics::ModelConfig;
use crate::error::{Error, Result};

/// Galerkin basis together with its collocation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBasis {
    domain_length: f64,
    n_modes: usize,
    eigenvalues: Vec<f64>,
    nodes: Vec<f64>,
    weight: f64,
    /// `e_j(x_k)`, row-major with one row per mode.
    samples: Vec<f64>,
}

impl SpectralBasis {
    /// Basis on `(0, pi)` with a grid exact for cubic nonlinearities.
    pub fn new(n_modes: usize) -> Result<Self> {
        Self::for_degree(std::f64::consts::PI, n_modes, 3)
    }

    /// Basis on `(0, length)` whose grid is exact when projecting a
    /// polynomial of the given degree (and integrating its primitive).
    pub fn for_degree(length: f64, n_modes: usize, degree: usize) -> Result<Self> {
        let d = degree.max(1);
        // frequencies up to (d + 1) N must stay below 2M
        let intervals = (2 * n_modes + 2).max((d + 1) * n_modes / 2 + 1);
        Self::with_intervals(length, n_modes, intervals)
    }

    /// Basis with an explicit number of grid intervals `M` (interior nodes `M - 1`).
    pub fn with_intervals(length: f64, n_modes: usize, intervals: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidArgument("basis needs at least one mode".into()));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidArgument(format!("domain length {length}")));
        }
        if intervals < n_modes + 1 {
            return Err(Error::SizeMismatch {
                expected: n_modes + 1,
                got: intervals,
            });
        }
        let pi = std::f64::consts::PI;
        let eigenvalues = (1..=n_modes)
            .map(|j| (j as f64 * pi / length).powi(2))
            .collect();
        let h = length / intervals as f64;
        let nodes: Vec<f64> = (1..intervals).map(|k| k as f64 * h).collect();
        let norm = (2.0 / length).sqrt();
        let mut samples = Vec::with_capacity(n_modes * nodes.len());
        for j in 1..=n_modes {
            for k in 1..intervals {
                // integer phase keeps sin exact at the symmetric nodes
                let phase = (j * k) as f64 * pi / intervals as f64;
                samples.push(norm * phase.sin());
            }
        }
        Ok(Self {
            domain_length: length,
            n_modes,
            eigenvalues,
            nodes,
            weight: h,
            samples,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Uniform quadrature weight of every interior node.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Sampled eigenfunction `e_j` (zero-based `j`) on the grid.
    pub fn mode_samples(&self, j: usize) -> &[f64] {
        let nq = self.nodes.len();
        &self.samples[j * nq..(j + 1) * nq]
    }

    /// Evaluate `e_j(x)` (zero-based `j`) at an arbitrary point.
    pub fn eval_mode(&self, j: usize, x: f64) -> f64 {
        let pi = std::f64::consts::PI;
        (2.0 / self.domain_length).sqrt() * ((j + 1) as f64 * pi * x / self.domain_length).sin()
    }

    /// Grid values of the series with coefficients `v`.
    pub fn to_physical(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() > self.n_modes {
            return Err(Error::SizeMismatch {
                expected: self.n_modes,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; self.nodes.len()];
        self.to_physical_into(v, &mut out);
        Ok(out)
    }

    /// Modal coefficients of grid values `g` (quadrature projection).
    pub fn from_physical(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.nodes.len() {
            return Err(Error::SizeMismatch {
                expected: self.nodes.len(),
                got: g.len(),
            });
        }
        let mut out = vec![0.0; self.n_modes];
        self.from_physical_into(g, &mut out);
        Ok(out)
    }

    pub(crate) fn to_physical_into(&self, v: &[f64], out: &mut [f64]) {
        let nq = self.nodes.len();
        out.iter_mut().for_each(|x| *x = 0.0);
        for (j, &c) in v.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let row = &self.samples[j * nq..(j + 1) * nq];
            for (o, &e) in out.iter_mut().zip(row) {
                *o += c * e;
            }
        }
    }

    pub(crate) fn from_physical_into(&self, g: &[f64], out: &mut [f64]) {
        let nq = self.nodes.len();
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.samples[j * nq..(j + 1) * nq];
            let s: f64 = row.iter().zip(g).map(|(e, x)| e * x).sum();
            *o = self.weight * s;
        }
    }

    /// `|s|_H` with `|[u1,u2]|^2 = ||grad u1||^2 + ||u2 + alpha u1||^2`.
    pub fn norm_h(&self, s: &State, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        s.check_len(self.n_modes)?;
        s.check_finite()?;
        Ok(self.norm_h_sq_raw(&s.position, &s.velocity, alpha).sqrt())
    }

    /// Phase-space distance `|a - b|_H`; unchecked, for hot loops.
    pub fn distance_h(&self, a: &State, b: &State, alpha: f64) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.n_modes {
            let da = a.position[j] - b.position[j];
            let dv = a.velocity[j] - b.velocity[j] + alpha * da;
            acc += self.eigenvalues[j] * da * da + dv * dv;
        }
        acc.sqrt()
    }

    pub(crate) fn norm_h_sq_raw(&self, pos: &[f64], vel: &[f64], alpha: f64) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.n_modes {
            let w = vel[j] + alpha * pos[j];
            acc += self.eigenvalues[j] * pos[j] * pos[j] + w * w;
        }
        acc
    }
}

/// Zero every coefficient with (one-based) index above `n`.
pub fn project(v: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 || n > v.len() {
        return Err(Error::InvalidArgument(format!(
            "projection rank {n} outside 1..={}",
            v.len()
        )));
    }
    let mut out = v.to_vec();
    out[n..].iter_mut().for_each(|x| *x = 0.0);
    Ok(out)
}

/// `|v|_{H_theta} = (sum_j v_j^2 / b_j^2)^{1/2}` over the leading coefficients.
pub fn norm_htheta(v: &[f64], noise: &NoiseSpec) -> Result<f64> {
    if v.len() > noise.b.len() {
        return Err(Error::SizeMismatch {
            expected: noise.b.len(),
            got: v.len(),
        });
    }
    let mut acc = 0.0;
    for (x, b) in v.iter().zip(&noise.b) {
        if !x.is_finite() {
            return Err(Error::InvalidState("non-finite control coefficient".into()));
        }
        acc += x * x / (b * b);
    }
    Ok(acc.sqrt())
}

/// `|s|_H^2 + 2 int F(u)` with the integral taken on the collocation grid.
pub fn energy(s: &State, cfg: &ModelConfig) -> Result<f64> {
    let basis = cfg.basis();
    let quadratic = basis.norm_h(s, cfg.alpha())?.powi(2);
    let u = basis.to_physical(&s.position)?;
    let potential: f64 = u.iter().map(|&x| cfg.nonlinearity().primitive(x)).sum::<f64>()
        * basis.weight();
    let e = quadratic + 2.0 * potential;
    if !e.is_finite() {
        return Err(Error::Range(format!("energy overflow (|s|_H^2 = {quadratic})")));
    }
    Ok(e)
}

/// A point `[u, du/dt]` of the phase space stored as modal coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl State {
    pub fn zeros(n: usize) -> Self {
        Self {
            position: vec![0.0; n],
            velocity: vec![0.0; n],
        }
    }

    pub fn new(position: Vec<f64>, velocity: Vec<f64>) -> Result<Self> {
        if position.len() != velocity.len() {
            return Err(Error::SizeMismatch {
                expected: position.len(),
                got: velocity.len(),
            });
        }
        let s = Self { position, velocity };
        s.check_finite()?;
        Ok(s)
    }

    /// Zero-velocity state with the given position coefficients.
    pub fn at_rest(position: Vec<f64>) -> Self {
        let n = position.len();
        Self {
            position,
            velocity: vec![0.0; n],
        }
    }

    pub fn n_modes(&self) -> usize {
        self.position.len()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(&self.velocity).all(|x| x.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidState("non-finite modal coefficient".into()))
        }
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.position.len() != n || self.velocity.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                got: self.position.len().min(self.velocity.len()),
            });
        }
        Ok(())
    }

    pub fn sub(&self, other: &State) -> State {
        State {
            position: self.position.iter().zip(&other.position).map(|(a, b)| a - b).collect(),
            velocity: self.velocity.iter().zip(&other.velocity).map(|(a, b)| a - b).collect(),
        }
    }

    /// `self + k * dir`
    pub fn offset(&self, dir: &State, k: f64) -> State {
        State {
            position: self.position.iter().zip(&dir.position).map(|(a, b)| a + k * b).collect(),
            velocity: self.velocity.iter().zip(&dir.velocity).map(|(a, b)| a + k * b).collect(),
        }
    }

    pub fn scaled(&self, k: f64) -> State {
        State {
            position: self.position.iter().map(|a| k * a).collect(),
            velocity: self.velocity.iter().map(|a| k * a).collect(),
        }
    }

    /// Linear interpolation `(1-s) self + s other` written into `out`.
    pub(crate) fn lerp_into(&self, other: &State, s: f64, out: &mut State) {
        for j in 0..self.position.len() {
            out.position[j] = self.position[j] + s * (other.position[j] - self.position[j]);
            out.velocity[j] = self.velocity[j] + s * (other.velocity[j] - self.velocity[j]);
        }
    }
}

/// Coefficients `b_j` of the colored noise `sum_j b_j dbeta_j e_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub b: Vec<f64>,
    pub law: String,
}

/// Witness that `B_1 = sum_j lambda_j b_j^2` is summable on the retained modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummabilityReport {
    pub partial_sums: Vec<f64>,
    /// Last increment relative to the total.
    pub relative_tail: f64,
    /// Increments non-increasing over the upper half of the modes.
    pub decreasing_tail: bool,
    pub summable: bool,
}

impl NoiseSpec {
    pub fn new(b: Vec<f64>, law: impl Into<String>) -> Result<Self> {
        if b.is_empty() {
            return Err(Error::InvalidArgument("noise needs at least one coefficient".into()));
        }
        if let Some((j, x)) = b.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "noise coefficient b_{} = {x} must be positive",
                j + 1
            )));
        }
        Ok(Self { b, law: law.into() })
    }

    /// `b_j = scale * j^(-exponent)` for `j = 1..=n`.
    pub fn power_law(n: usize, exponent: f64, scale: f64) -> Result<Self> {
        let b = (1..=n).map(|j| scale * (j as f64).powf(-exponent)).collect();
        Self::new(b, format!("b_j = {scale} * j^(-{exponent})"))
    }

    /// Default smooth noise `b_j = j^-2`.
    pub fn default_for(n: usize) -> Self {
        Self::power_law(n, 2.0, 1.0).expect("positive coefficients")
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// `B = sum_j b_j^2`.
    pub fn total_variance(&self) -> f64 {
        self.b.iter().map(|b| b * b).sum()
    }

    /// `B_1 = sum_j lambda_j b_j^2`.
    pub fn weighted_variance(&self, basis: &SpectralBasis) -> f64 {
        self.b
            .iter()
            .zip(basis.eigenvalues())
            .map(|(b, l)| l * b * b)
            .sum()
    }

    pub fn summability(&self, basis: &SpectralBasis, tol: f64) -> SummabilityReport {
        let incr: Vec<f64> = self
            .b
            .iter()
            .zip(basis.eigenvalues())
            .map(|(b, l)| l * b * b)
            .collect();
        let mut partial_sums = Vec::with_capacity(incr.len());
        let mut acc = 0.0;
        for x in &incr {
            acc += x;
            partial_sums.push(acc);
        }
        let relative_tail = incr.last().copied().unwrap_or(0.0) / acc.max(f64::MIN_POSITIVE);
        let half = incr.len() / 2;
        let decreasing_tail = incr[half..].windows(2).all(|w| w[1] <= w[0]);
        SummabilityReport {
            partial_sums,
            relative_tail,
            decreasing_tail,
            summable: decreasing_tail && relative_tail < tol,
        }
    }
}
