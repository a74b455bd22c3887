use serde::{Deserialize, Serialize};

use crate::control::ControlPath;
use crate::dynamics::{Integrator, ModeStep, ModelConfig};
use crate::error::{Error, Result};
use crate::spectral::State;

/// Balls the controlled path is pushed out of.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    pub centers: Vec<State>,
    /// Radius below which the penalty is active.
    pub radius: f64,
}

/// Terms of the penalized objective at one control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objective: f64,
    pub action: f64,
    pub penalty: f64,
    pub barrier: f64,
    /// `|S^phi(T; u1) - target|_H`.
    pub gap: f64,
    /// Smallest grid distance of the path to a barrier center; infinite without a barrier.
    pub min_barrier_distance: f64,
}

/// `J_T(phi) + (1 / 2 sigma) max(0, |S^phi(T; u1) - target|_H - eta)^2`, plus an
/// optional barrier `(h / 2 sigma) sum_n max(0, r - |x_n - c|_H)^2`, as a function
/// of the coefficients of a piecewise-constant control.
///
/// The gradient is the exact adjoint of the discrete exponential midpoint
/// scheme, so it agrees with finite differences of the same discrete objective.
pub struct Objective<'a> {
    cfg: &'a ModelConfig,
    modes: Vec<ModeStep>,
    h: f64,
    steps_per_interval: usize,
    n_intervals: usize,
    n_control: usize,
    horizon: f64,
    u1: State,
    target: State,
    pub eta: f64,
    pub sigma: f64,
    pub barrier: Option<Barrier>,
    pos: Vec<f64>,
    vel: Vec<f64>,
    mid: Vec<f64>,
    grid: Vec<f64>,
    grid2: Vec<f64>,
    fbuf: Vec<f64>,
    force: Vec<f64>,
    lam_a: Vec<f64>,
    lam_v: Vec<f64>,
    mu: Vec<f64>,
    nu: Vec<f64>,
    g0: Vec<f64>,
    g1: Vec<f64>,
}

impl<'a> Objective<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cfg: &'a ModelConfig,
        u1: &State,
        target: &State,
        horizon: f64,
        n_intervals: usize,
        n_control: usize,
        dt: f64,
    ) -> Result<Self> {
        let n = cfg.n_modes();
        u1.check_len(n)?;
        target.check_len(n)?;
        u1.check_finite()?;
        target.check_finite()?;
        if n_control == 0 || n_control > n {
            return Err(Error::InvalidArgument(format!("control modes {n_control} outside 1..={n}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) || n_intervals == 0 {
            return Err(Error::InvalidArgument(format!("horizon {horizon} with {n_intervals} intervals")));
        }
        let delta = horizon / n_intervals as f64;
        let m = ((delta / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let h = delta / m as f64;
        let modes = Integrator::new(cfg, h)?.modes;
        let nq = cfg.basis().n_nodes();
        Ok(Self {
            cfg,
            modes,
            h,
            steps_per_interval: m,
            n_intervals,
            n_control,
            horizon,
            u1: u1.clone(),
            target: target.clone(),
            eta: 0.0,
            sigma: 1.0,
            barrier: None,
            pos: Vec::new(),
            vel: Vec::new(),
            mid: Vec::new(),
            grid: vec![0.0; nq],
            grid2: vec![0.0; nq],
            fbuf: vec![0.0; n],
            force: vec![0.0; n],
            lam_a: vec![0.0; n],
            lam_v: vec![0.0; n],
            mu: vec![0.0; n],
            nu: vec![0.0; n],
            g0: vec![0.0; n],
            g1: vec![0.0; n],
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_intervals * self.n_control
    }

    pub fn n_intervals(&self) -> usize {
        self.n_intervals
    }

    pub fn n_control(&self) -> usize {
        self.n_control
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn interval_length(&self) -> f64 {
        self.horizon / self.n_intervals as f64
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn path(&self, coeffs: &[f64]) -> Result<ControlPath> {
        ControlPath::new(self.horizon, self.n_intervals, self.n_control, coeffs.to_vec())
    }

    /// State after `k` integration steps of the last evaluation.
    pub fn state_at_step(&self, k: usize) -> State {
        let n = self.cfg.n_modes();
        State {
            position: self.pos[k * n..(k + 1) * n].to_vec(),
            velocity: self.vel[k * n..(k + 1) * n].to_vec(),
        }
    }

    /// Distance to the target at the end of every control interval of the last evaluation.
    pub fn gaps_at_interval_ends(&self) -> Vec<f64> {
        (1..=self.n_intervals)
            .map(|k| {
                let s = self.state_at_step(k * self.steps_per_interval);
                self.cfg.basis().distance_h(&s, &self.target, self.cfg.alpha())
            })
            .collect()
    }

    /// Running minimum over steps of the distance to the barrier centers, sampled at interval ends.
    pub fn barrier_distance_prefix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_intervals);
        let Some(b) = &self.barrier else {
            return vec![f64::INFINITY; self.n_intervals];
        };
        let mut m = f64::INFINITY;
        for k in 1..=self.n_intervals * self.steps_per_interval {
            let s = self.state_at_step(k);
            for c in &b.centers {
                m = m.min(self.cfg.basis().distance_h(&s, c, self.cfg.alpha()));
            }
            if k % self.steps_per_interval == 0 {
                out.push(m);
            }
        }
        out
    }

    fn apply_df(&mut self, a: &[f64], g: &[f64], out: &mut [f64]) {
        let basis = self.cfg.basis();
        let f = self.cfg.nonlinearity();
        basis.to_physical_into(a, &mut self.grid);
        basis.to_physical_into(g, &mut self.grid2);
        for (w, u) in self.grid2.iter_mut().zip(&self.grid) {
            *w *= f.derivative(*u);
        }
        basis.from_physical_into(&self.grid2, out);
    }

    fn barrier_term(&self, a: &[f64], v: &[f64], grad: Option<(&mut [f64], &mut [f64])>) -> (f64, f64) {
        let Some(b) = &self.barrier else {
            return (0.0, f64::INFINITY);
        };
        let basis = self.cfg.basis();
        let lambda = basis.eigenvalues();
        let alpha = self.cfg.alpha();
        let n = a.len();
        let mut val = 0.0;
        let mut dmin = f64::INFINITY;
        let mut grad = grad;
        for c in &b.centers {
            let mut d2 = 0.0;
            for j in 0..n {
                let da = a[j] - c.position[j];
                let w = v[j] - c.velocity[j] + alpha * da;
                d2 += lambda[j] * da * da + w * w;
            }
            let d = d2.sqrt();
            dmin = dmin.min(d);
            if d < b.radius {
                let gap = b.radius - d;
                val += 0.5 * self.h * gap * gap / self.sigma;
                if let Some((ga, gv)) = grad.as_mut() {
                    if d > 0.0 {
                        let coef = -self.h * gap / (self.sigma * d);
                        for j in 0..n {
                            let da = a[j] - c.position[j];
                            let w = v[j] - c.velocity[j] + alpha * da;
                            ga[j] += coef * (lambda[j] * da + alpha * w);
                            gv[j] += coef * w;
                        }
                    }
                }
            }
        }
        (val, dmin)
    }

    /// Objective terms at `coeffs` (row-major, `n_control` per interval); the
    /// gradient is written into `grad` when given.
    pub fn evaluate(&mut self, coeffs: &[f64], grad: Option<&mut [f64]>) -> Result<Evaluation> {
        let cfg = self.cfg;
        let n = cfg.n_modes();
        let nc = self.n_control;
        let m = self.steps_per_interval;
        let total = self.n_intervals * m;
        if coeffs.len() != self.n_params() {
            return Err(Error::SizeMismatch {
                expected: self.n_params(),
                got: coeffs.len(),
            });
        }
        let nonlinear = !cfg.nonlinearity().is_zero();
        self.pos.resize((total + 1) * n, 0.0);
        self.vel.resize((total + 1) * n, 0.0);
        self.mid.resize(total * n, 0.0);
        self.pos[..n].copy_from_slice(&self.u1.position);
        self.vel[..n].copy_from_slice(&self.u1.velocity);
        let ceiling2 = cfg.ceiling() * cfg.ceiling();
        let mut barrier = 0.0;
        let mut dmin = f64::INFINITY;
        for k in 0..self.n_intervals {
            self.force.copy_from_slice(cfg.h());
            for j in 0..nc {
                self.force[j] += coeffs[k * nc + j];
            }
            for q in 0..m {
                let s = k * m + q;
                let (a0, a1) = (s * n, (s + 1) * n);
                if nonlinear {
                    Integrator::eval_f(cfg, &mut self.grid, &self.pos[a0..a1], &mut self.fbuf);
                } else {
                    self.fbuf.iter_mut().for_each(|x| *x = 0.0);
                }
                for (j, md) in self.modes.iter().enumerate() {
                    let c0 = self.force[j] - self.fbuf[j];
                    self.mid[a0 + j] = md.r_half[0] * self.pos[a0 + j] + md.r_half[1] * self.vel[a0 + j] + md.d_half[0] * c0;
                }
                if nonlinear {
                    Integrator::eval_f(cfg, &mut self.grid, &self.mid[a0..a1], &mut self.fbuf);
                }
                let mut norm2 = 0.0;
                for (j, md) in self.modes.iter().enumerate() {
                    let (a, v) = (self.pos[a0 + j], self.vel[a0 + j]);
                    let c1 = self.force[j] - self.fbuf[j];
                    let na = md.r_full[0] * a + md.r_full[1] * v + md.d_full[0] * c1;
                    let nv = md.r_full[2] * a + md.r_full[3] * v + md.d_full[1] * c1;
                    self.pos[a1 + j] = na;
                    self.vel[a1 + j] = nv;
                    let w = nv + cfg.alpha() * na;
                    norm2 += cfg.basis().eigenvalues()[j] * na * na + w * w;
                }
                if !(norm2 <= ceiling2) {
                    return Err(Error::Divergence {
                        t: (s + 1) as f64 * self.h,
                        norm: norm2.sqrt(),
                    });
                }
                if self.barrier.is_some() {
                    let (b, d) = self.barrier_term(&self.pos[a1..a1 + n], &self.vel[a1..a1 + n], None);
                    barrier += b;
                    dmin = dmin.min(d);
                }
            }
        }
        let end = total * n;
        let alpha = cfg.alpha();
        let lambda = cfg.basis().eigenvalues();
        let mut gap2 = 0.0;
        for j in 0..n {
            let da = self.pos[end + j] - self.target.position[j];
            let w = self.vel[end + j] - self.target.velocity[j] + alpha * da;
            gap2 += lambda[j] * da * da + w * w;
        }
        let gap = gap2.sqrt();
        let excess = (gap - self.eta).max(0.0);
        let penalty = 0.5 * excess * excess / self.sigma;
        let delta = self.interval_length();
        let b = &cfg.noise().b;
        let mut action = 0.0;
        for k in 0..self.n_intervals {
            for j in 0..nc {
                let x = coeffs[k * nc + j];
                action += x * x / (b[j] * b[j]);
            }
        }
        action *= 0.5 * delta;
        let eval = Evaluation {
            objective: action + penalty + barrier,
            action,
            penalty,
            barrier,
            gap,
            min_barrier_distance: dmin,
        };
        let Some(grad) = grad else {
            return Ok(eval);
        };
        // adjoint sweep
        let mut lam_a = std::mem::take(&mut self.lam_a);
        let mut lam_v = std::mem::take(&mut self.lam_v);
        let mut mu = std::mem::take(&mut self.mu);
        let mut nu = std::mem::take(&mut self.nu);
        let mut g0 = std::mem::take(&mut self.g0);
        let mut g1 = std::mem::take(&mut self.g1);
        lam_a.iter_mut().for_each(|x| *x = 0.0);
        lam_v.iter_mut().for_each(|x| *x = 0.0);
        if excess > 0.0 && gap > 0.0 {
            let coef = excess / (self.sigma * gap);
            for j in 0..n {
                let da = self.pos[end + j] - self.target.position[j];
                let w = self.vel[end + j] - self.target.velocity[j] + alpha * da;
                lam_a[j] = coef * (lambda[j] * da + alpha * w);
                lam_v[j] = coef * w;
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for s in (0..total).rev() {
            let (a0, a1) = (s * n, (s + 1) * n);
            if self.barrier.is_some() {
                let pa = self.pos[a1..a1 + n].to_vec();
                let pv = self.vel[a1..a1 + n].to_vec();
                self.barrier_term(&pa, &pv, Some((&mut lam_a, &mut lam_v)));
            }
            let k = s / m;
            for (j, md) in self.modes.iter().enumerate() {
                g1[j] = md.d_full[0] * lam_a[j] + md.d_full[1] * lam_v[j];
            }
            if nonlinear {
                let y = self.mid[a0..a1].to_vec();
                self.apply_df(&y, &g1, &mut mu);
                mu.iter_mut().for_each(|x| *x = -*x);
            } else {
                mu.iter_mut().for_each(|x| *x = 0.0);
            }
            for (j, md) in self.modes.iter().enumerate() {
                g0[j] = md.d_half[0] * mu[j];
            }
            if nonlinear {
                let a = self.pos[a0..a1].to_vec();
                self.apply_df(&a, &g0, &mut nu);
            } else {
                nu.iter_mut().for_each(|x| *x = 0.0);
            }
            for (j, md) in self.modes.iter().enumerate() {
                let (la, lv) = (lam_a[j], lam_v[j]);
                lam_a[j] = md.r_full[0] * la + md.r_full[2] * lv + md.r_half[0] * mu[j] - nu[j];
                lam_v[j] = md.r_full[1] * la + md.r_full[3] * lv + md.r_half[1] * mu[j];
            }
            for j in 0..nc {
                grad[k * nc + j] += g1[j] + g0[j];
            }
        }
        for k in 0..self.n_intervals {
            for j in 0..nc {
                grad[k * nc + j] += delta * coeffs[k * nc + j] / (b[j] * b[j]);
            }
        }
        self.lam_a = lam_a;
        self.lam_v = lam_v;
        self.mu = mu;
        self.nu = nu;
        self.g0 = g0;
        self.g1 = g1;
        Ok(eval)
    }
}

/// Value and adjoint gradient of the penalized objective at `phi`.
#[allow(clippy::too_many_arguments)]
pub fn action_gradient(
    cfg: &ModelConfig,
    phi: &ControlPath,
    u1: &State,
    target: &State,
    eta: f64,
    sigma: f64,
    dt: f64,
) -> Result<(Evaluation, ControlPath)> {
    if !(sigma > 0.0) || !(eta >= 0.0) {
        return Err(Error::InvalidArgument(format!("need sigma > 0 and eta >= 0, got {sigma}, {eta}")));
    }
    let mut obj = Objective::new(cfg, u1, target, phi.horizon(), phi.n_intervals(), phi.n_modes(), dt)?;
    obj.eta = eta;
    obj.sigma = sigma;
    let mut g = vec![0.0; obj.n_params()];
    let eval = obj.evaluate(phi.coeffs(), Some(&mut g)).map_err(|e| match e {
        Error::Divergence { .. } => Error::GradientUnavailable(e.to_string()),
        other => other,
    })?;
    Ok((eval, obj.path(&g)?))
}
