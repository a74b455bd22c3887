use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::spectral::State;

/// `exp(A tau)` for `A = [[0, 1], [-lambda, -gamma]]`, row-major.
pub fn oscillator_propagator(lambda: f64, gamma: f64, tau: f64) -> [f64; 4] {
    let disc = lambda - 0.25 * gamma * gamma;
    let (c, s) = if disc > 0.0 {
        let w = disc.sqrt();
        ((w * tau).cos(), (w * tau).sin() / w)
    } else if disc < 0.0 {
        let k = (-disc).sqrt();
        ((k * tau).cosh(), (k * tau).sinh() / k)
    } else {
        (1.0, tau)
    };
    let e = (-0.5 * gamma * tau).exp();
    [
        e * (c + 0.5 * gamma * s),
        e * s,
        -e * lambda * s,
        e * (c - 0.5 * gamma * s),
    ]
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x.push(0.5 * (1.0 - z));
        w.push(1.0 / ((1.0 - z * z) * dp * dp));
    }
    (x, w)
}

/// Covariance of `int_0^tau exp(A(tau-s)) (0,1)^T dbeta_s` as `[aa, av, vv]`.
pub fn oscillator_noise_covariance(lambda: f64, gamma: f64, tau: f64) -> [f64; 3] {
    let (x, w) = gauss_legendre(16);
    let mut cov = [0.0; 3];
    for (xi, wi) in x.iter().zip(&w) {
        let r = oscillator_propagator(lambda, gamma, xi * tau);
        let (g0, g1) = (r[1], r[3]);
        cov[0] += wi * g0 * g0;
        cov[1] += wi * g0 * g1;
        cov[2] += wi * g1 * g1;
    }
    cov.map(|c| c * tau)
}

/// Per-mode propagator data.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ModeStep {
    pub r_half: [f64; 4],
    pub d_half: [f64; 2],
    pub r_full: [f64; 4],
    /// Response to unit constant forcing over a full step.
    pub d_full: [f64; 2],
    /// Lower Cholesky factor of the unit-noise increment covariance over a half step.
    pub chol: [f64; 3],
}

fn forcing_response(r: &[f64; 4], lambda: f64) -> [f64; 2] {
    [(1.0 - r[0]) / lambda, -r[2] / lambda]
}

/// Exponential midpoint integrator: each mode's damped oscillator is propagated
/// exactly and the nonlinearity enters as a constant forcing evaluated at a
/// predicted half-step position. Stationary points of the Galerkin system are
/// exact fixed points of the map.
pub struct Integrator<'a> {
    cfg: &'a ModelConfig,
    dt: f64,
    pub(crate) modes: Vec<ModeStep>,
    forcing: Vec<f64>,
    grid: Vec<f64>,
    f0: Vec<f64>,
    f1: Vec<f64>,
    mid: Vec<f64>,
    xi: Vec<[f64; 4]>,
}

/// Largest admissible `dt * sqrt(lambda_N)`.
pub const STABILITY_LIMIT: f64 = std::f64::consts::PI;

impl<'a> Integrator<'a> {
    pub fn new(cfg: &'a ModelConfig, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step {dt}")));
        }
        let lmax = *cfg.basis().eigenvalues().last().expect("nonempty basis");
        if dt * lmax.sqrt() > STABILITY_LIMIT {
            return Err(Error::InvalidArgument(format!(
                "time step {dt} too large: dt * sqrt(lambda_N) = {} > {STABILITY_LIMIT}",
                dt * lmax.sqrt()
            )));
        }
        let tau = 0.5 * dt;
        let gamma = cfg.gamma();
        let modes = cfg
            .basis()
            .eigenvalues()
            .iter()
            .map(|&l| {
                let r_half = oscillator_propagator(l, gamma, tau);
                let r_full = oscillator_propagator(l, gamma, dt);
                let cov = oscillator_noise_covariance(l, gamma, tau);
                let l11 = cov[0].max(0.0).sqrt();
                let l21 = if l11 > 0.0 { cov[1] / l11 } else { 0.0 };
                let l22 = (cov[2] - l21 * l21).max(0.0).sqrt();
                ModeStep {
                    r_half,
                    d_half: forcing_response(&r_half, l),
                    r_full,
                    d_full: forcing_response(&r_full, l),
                    chol: [l11, l21, l22],
                }
            })
            .collect();
        let n = cfg.n_modes();
        Ok(Self {
            cfg,
            dt,
            modes,
            forcing: cfg.h().to_vec(),
            grid: vec![0.0; cfg.basis().n_nodes()],
            f0: vec![0.0; n],
            f1: vec![0.0; n],
            mid: vec![0.0; n],
            xi: vec![[0.0; 4]; n],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    /// Use `h + phi` as forcing until the next call; `phi` may cover fewer modes.
    pub fn set_control(&mut self, phi: &[f64]) {
        self.forcing.copy_from_slice(self.cfg.h());
        for (f, p) in self.forcing.iter_mut().zip(phi) {
            *f += p;
        }
    }

    pub fn clear_control(&mut self) {
        self.forcing.copy_from_slice(self.cfg.h());
    }

    /// Modal coefficients of `f(u)` for position `a`, written into `out`.
    pub(crate) fn eval_f(cfg: &ModelConfig, grid: &mut [f64], a: &[f64], out: &mut [f64]) {
        let f = cfg.nonlinearity();
        if f.is_zero() {
            out.iter_mut().for_each(|x| *x = 0.0);
            return;
        }
        let basis = cfg.basis();
        basis.to_physical_into(a, grid);
        for u in grid.iter_mut() {
            *u = f.eval(*u);
        }
        basis.from_physical_into(grid, out);
    }

    /// `P f(u)` at the current position, as used by the next step.
    pub fn nonlinear_term(&mut self, a: &[f64]) -> &[f64] {
        Self::eval_f(self.cfg, &mut self.grid, a, &mut self.f0);
        &self.f0
    }

    fn predictor(&mut self, s: &State, noisy: bool) {
        Self::eval_f(self.cfg, &mut self.grid, &s.position, &mut self.f0);
        for (j, m) in self.modes.iter().enumerate() {
            let c0 = self.forcing[j] - self.f0[j];
            let mut y = m.r_half[0] * s.position[j] + m.r_half[1] * s.velocity[j] + m.d_half[0] * c0;
            if noisy {
                y += self.xi[j][0];
            }
            self.mid[j] = y;
        }
        Self::eval_f(self.cfg, &mut self.grid, &self.mid, &mut self.f1);
    }

    fn corrector(&mut self, s: &mut State, noisy: bool) {
        for (j, m) in self.modes.iter().enumerate() {
            let (a, v) = (s.position[j], s.velocity[j]);
            let c1 = self.forcing[j] - self.f1[j];
            let mut na = m.r_full[0] * a + m.r_full[1] * v + m.d_full[0] * c1;
            let mut nv = m.r_full[2] * a + m.r_full[3] * v + m.d_full[1] * c1;
            if noisy {
                let x = self.xi[j];
                na += m.r_half[0] * x[0] + m.r_half[1] * x[1] + x[2];
                nv += m.r_half[2] * x[0] + m.r_half[3] * x[1] + x[3];
            }
            s.position[j] = na;
            s.velocity[j] = nv;
        }
    }

    pub fn step(&mut self, s: &mut State) {
        self.predictor(s, false);
        self.corrector(s, false);
    }

    /// One step with additive noise of per-mode amplitude `amp_j = sqrt(eps) b_j`.
    pub fn step_noisy<R: Rng + ?Sized>(&mut self, s: &mut State, amp: &[f64], rng: &mut R) {
        for (j, m) in self.modes.iter().enumerate() {
            let z: [f64; 4] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let k = amp[j];
            self.xi[j] = [
                k * m.chol[0] * z[0],
                k * (m.chol[1] * z[0] + m.chol[2] * z[1]),
                k * m.chol[0] * z[2],
                k * (m.chol[1] * z[2] + m.chol[2] * z[3]),
            ];
        }
        self.predictor(s, true);
        self.corrector(s, true);
    }

    /// Abort with a divergence error when `|s|_H` exceeds the configured ceiling.
    pub fn check(&self, s: &State, t: f64) -> Result<()> {
        let n2 = self
            .cfg
            .basis()
            .norm_h_sq_raw(&s.position, &s.velocity, self.cfg.alpha());
        let c = self.cfg.ceiling();
        if !(n2 <= c * c) {
            return Err(Error::Divergence { t, norm: n2.sqrt() });
        }
        Ok(())
    }
}

/// Sampled path `t_k -> S(t_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory has its initial point")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

fn steps_for(t: f64, dt: f64) -> Result<usize> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidArgument(format!("horizon {t}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step {dt}")));
    }
    Ok(((t / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize)
}

/// `S(t) s0` on `[0, T]`, recorded at every step of size `T / ceil(T / dt)`.
pub fn flow_deterministic(cfg: &ModelConfig, s0: &State, t: f64, dt: f64) -> Result<Trajectory> {
    s0.check_len(cfg.n_modes())?;
    s0.check_finite()?;
    let n = steps_for(t, dt)?;
    let h = t / n as f64;
    let mut it = Integrator::new(cfg, h)?;
    let mut s = s0.clone();
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(0.0);
    states.push(s.clone());
    for k in 1..=n {
        it.step(&mut s);
        let tk = k as f64 * h;
        it.check(&s, tk)?;
        times.push(tk);
        states.push(s.clone());
    }
    Ok(Trajectory { times, states })
}

/// Number of integration steps per control interval for a requested `dt`.
pub fn steps_per_interval(phi: &ControlPath, dt: f64) -> Result<usize> {
    steps_for(phi.interval_length(), dt)
}

/// `S^phi(t) s0` with forcing `h + phi`, recorded at every integration step.
pub fn flow_controlled(cfg: &ModelConfig, s0: &State, phi: &ControlPath, dt: f64) -> Result<Trajectory> {
    s0.check_len(cfg.n_modes())?;
    s0.check_finite()?;
    if phi.n_modes() > cfg.n_modes() {
        return Err(Error::SizeMismatch {
            expected: cfg.n_modes(),
            got: phi.n_modes(),
        });
    }
    let k = steps_per_interval(phi, dt)?;
    let h = phi.interval_length() / k as f64;
    let mut it = Integrator::new(cfg, h)?;
    let total = k * phi.n_intervals();
    let mut s = s0.clone();
    let mut times = Vec::with_capacity(total + 1);
    let mut states = Vec::with_capacity(total + 1);
    times.push(0.0);
    states.push(s.clone());
    for i in 0..phi.n_intervals() {
        it.set_control(phi.interval(i));
        for q in 0..k {
            it.step(&mut s);
            let step = i * k + q + 1;
            let tk = step as f64 * h;
            it.check(&s, tk)?;
            times.push(tk);
            states.push(s.clone());
        }
    }
    Ok(Trajectory { times, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::NonlinearitySpec;
    use crate::spectral::NoiseSpec;

    fn linear(n: usize, gamma: f64) -> ModelConfig {
        ModelConfig::new(gamma, NonlinearitySpec::Zero, vec![], n, NoiseSpec::default_for(n)).unwrap()
    }

    #[test]
    fn propagator_semigroup_and_identity() {
        for &(l, g) in &[(1.0, 0.5), (0.01, 0.5), (0.0625, 0.5), (9.0, 2.0)] {
            let r0 = oscillator_propagator(l, g, 0.0);
            assert!((r0[0] - 1.0).abs() < 1e-15 && r0[1].abs() < 1e-15 && (r0[3] - 1.0).abs() < 1e-15);
            let a = oscillator_propagator(l, g, 0.3);
            let b = oscillator_propagator(l, g, 0.6);
            let aa = [
                a[0] * a[0] + a[1] * a[2],
                a[0] * a[1] + a[1] * a[3],
                a[2] * a[0] + a[3] * a[2],
                a[2] * a[1] + a[3] * a[3],
            ];
            for k in 0..4 {
                assert!((aa[k] - b[k]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn noise_covariance_tends_to_stationary() {
        let (l, g) = (4.0, 0.5);
        let c = oscillator_noise_covariance(l, g, 0.01);
        // small-time expansion: vv ~ tau, av ~ tau^2/2, aa ~ tau^3/3
        assert!((c[2] / 0.01 - 1.0).abs() < 0.01);
        assert!((c[1] / 5e-5 - 1.0).abs() < 0.02);
        assert!((c[0] / (1e-6 / 3.0) - 1.0).abs() < 0.02);
        // stationary covariance via the semigroup: Sigma(t) = Sigma_inf - R Sigma_inf R^T
        let t = 1.3;
        let c = oscillator_noise_covariance(l, g, t);
        let r = oscillator_propagator(l, g, t);
        let (sa, sv) = (1.0 / (2.0 * g * l), 1.0 / (2.0 * g));
        let aa = sa - (r[0] * r[0] * sa + r[1] * r[1] * sv);
        let av = -(r[0] * r[2] * sa + r[1] * r[3] * sv);
        let vv = sv - (r[2] * r[2] * sa + r[3] * r[3] * sv);
        assert!((c[0] - aa).abs() < 1e-12 && (c[1] - av).abs() < 1e-12 && (c[2] - vv).abs() < 1e-12);
    }

    #[test]
    fn linear_single_mode_closed_form() {
        let cfg = linear(1, 0.5);
        let s0 = State::new(vec![1.0], vec![0.0]).unwrap();
        let tr = flow_deterministic(&cfg, &s0, 5.0, 0.01).unwrap();
        let w = (1.0f64 - 0.0625).sqrt();
        for (t, s) in tr.times.iter().zip(&tr.states) {
            let e = (-0.25 * t).exp();
            let a = e * ((w * t).cos() + 0.25 / w * (w * t).sin());
            assert!((s.position[0] - a).abs() < 1e-6);
        }
    }

    #[test]
    fn equilibrium_is_exact_fixed_point() {
        let cfg = ModelConfig::double_well();
        let eq = crate::dynamics::find_equilibria(&cfg).unwrap();
        let s0 = eq.equilibria[2].state.clone();
        let tr = flow_deterministic(&cfg, &s0, 10.0, 0.01).unwrap();
        for s in &tr.states {
            assert!(cfg.basis().distance_h(s, &s0, cfg.alpha()) < 1e-10);
        }
    }

    #[test]
    fn second_order_in_time() {
        let cfg = ModelConfig::double_well();
        let mut a = vec![0.0; 8];
        a[0] = 0.8;
        a[2] = -0.2;
        let s0 = State::at_rest(a);
        let end = |dt: f64| flow_deterministic(&cfg, &s0, 2.0, dt).unwrap().last().clone();
        let r = end(0.0025);
        let e1 = cfg.basis().distance_h(&end(0.02), &r, cfg.alpha());
        let e2 = cfg.basis().distance_h(&end(0.01), &r, cfg.alpha());
        let order = (e1 / e2).log2();
        assert!(order > 1.8 && order < 2.3, "observed order {order}");
    }

    #[test]
    fn rejects_unstable_step() {
        let cfg = linear(8, 0.5);
        assert!(Integrator::new(&cfg, 0.5).is_err());
        assert!(Integrator::new(&cfg, 0.3).is_ok());
    }

    #[test]
    fn zero_noise_amplitude_is_deterministic_step() {
        let cfg = ModelConfig::double_well();
        let mut it = Integrator::new(&cfg, 0.01).unwrap();
        let mut a = State::at_rest(vec![0.3, -0.1, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mut b = a.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        it.step(&mut a);
        it.step_noisy(&mut b, &[0.0; 8], &mut rng);
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_detected() {
        let cfg = ModelConfig::new(
            0.5,
            NonlinearitySpec::Polynomial {
                coeffs: vec![0.0, 0.0, 0.0, -1.0],
            },
            vec![],
            2,
            NoiseSpec::default_for(2),
        )
        .unwrap()
        .with_ceiling(100.0);
        let s0 = State::at_rest(vec![5.0, 0.0]);
        assert!(matches!(
            flow_deterministic(&cfg, &s0, 10.0, 0.01),
            Err(Error::Divergence { .. })
        ));
    }
}
