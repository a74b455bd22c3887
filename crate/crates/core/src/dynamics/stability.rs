use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::Result;
use crate::spectral::State;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    /// Some exponent has `|Re mu| < tol`.
    Marginal,
}

/// Linearization spectrum at an equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Eigenvalues `k` of `-Laplacian + f'(u)` (ascending).
    pub stiffness: Vec<f64>,
    /// Largest real part over the roots of `mu^2 + gamma mu + k = 0`.
    pub max_real: f64,
    /// Smallest `|Re mu|` over all roots.
    pub hyperbolicity_margin: f64,
    pub n_unstable: usize,
    /// Growing eigenvectors `(w, mu_+ w)` normalized in H, with their exponents.
    pub unstable_directions: Vec<(f64, State)>,
}

pub const STABILITY_TOL: f64 = 1e-8;

/// Roots of `mu^2 + gamma mu + k` as `(re, im)` pairs.
pub fn characteristic_roots(gamma: f64, k: f64) -> [(f64, f64); 2] {
    let disc = gamma * gamma - 4.0 * k;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [(0.5 * (-gamma + s), 0.0), (0.5 * (-gamma - s), 0.0)]
    } else {
        let s = (-disc).sqrt();
        [(-0.5 * gamma, 0.5 * s), (-0.5 * gamma, -0.5 * s)]
    }
}

/// Stability label of `u_hat` from the spectrum of its linearization.
pub fn classify_stability(u_hat: &State, cfg: &ModelConfig) -> Result<(Stability, Spectrum)> {
    u_hat.check_len(cfg.n_modes())?;
    u_hat.check_finite()?;
    let n = cfg.n_modes();
    let d = cfg.derivative_matrix(&u_hat.position);
    let mut k = DMatrix::from_row_slice(n, n, &d);
    for (i, l) in cfg.basis().eigenvalues().iter().enumerate() {
        k[(i, i)] += l;
    }
    let eig = SymmetricEigen::new(k);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let gamma = cfg.gamma();
    let alpha = cfg.alpha();
    let mut stiffness = Vec::with_capacity(n);
    let mut max_real = f64::NEG_INFINITY;
    let mut margin = f64::INFINITY;
    let mut unstable_directions = Vec::new();
    for &i in &order {
        let kv = eig.eigenvalues[i];
        stiffness.push(kv);
        let roots = characteristic_roots(gamma, kv);
        for (re, _) in roots {
            max_real = max_real.max(re);
            margin = margin.min(re.abs());
        }
        let mu = roots[0].0;
        if mu > STABILITY_TOL {
            let mut w: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            // fix sign so the dominant coefficient is positive
            let lead = w.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                w.iter_mut().for_each(|x| *x = -*x);
            }
            let v: Vec<f64> = w.iter().map(|x| mu * x).collect();
            let dir = State { position: w, velocity: v };
            let nrm = cfg.basis().distance_h(&dir, &State::zeros(n), alpha);
            unstable_directions.push((mu, dir.scaled(1.0 / nrm)));
        }
    }
    let label = if margin < STABILITY_TOL {
        Stability::Marginal
    } else if max_real < 0.0 {
        Stability::Stable
    } else {
        Stability::Unstable
    };
    let spectrum = Spectrum {
        stiffness,
        max_real,
        hyperbolicity_margin: margin,
        n_unstable: unstable_directions.len(),
        unstable_directions,
    };
    Ok((label, spectrum))
}
