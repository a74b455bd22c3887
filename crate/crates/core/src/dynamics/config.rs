use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{NoiseSpec, SpectralBasis};

/// Polynomial `f(u) = sum_k c_k u^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    fn horner(c: &[f64], u: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &x| acc * u + x)
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        Self::horner(&self.coeffs, u)
    }

    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * u + k as f64 * c;
        }
        acc
    }

    pub fn second_derivative(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate().skip(2).rev() {
            acc = acc * u + (k * (k - 1)) as f64 * c;
        }
        acc
    }

    /// Primitive `F` normalized by `F(0) = 0`.
    pub fn primitive(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate().rev() {
            acc = acc * u + c / (k + 1) as f64;
        }
        acc * u
    }

    fn primitive_coeffs(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        out.extend(self.coeffs.iter().enumerate().map(|(k, c)| c / (k + 1) as f64));
        out
    }
}

/// User-facing description of `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearitySpec {
    /// `f(u) = sum_k coeffs[k] u^k`
    Polynomial { coeffs: Vec<f64> },
    /// `f(u) = u^3 - kappa u`
    Cubic { kappa: f64 },
    Zero,
    /// Named non-polynomial law; accepted by the parser, rejected by validation.
    Custom { name: String },
}

impl Default for NonlinearitySpec {
    fn default() -> Self {
        NonlinearitySpec::Cubic { kappa: 1.0 }
    }
}

impl NonlinearitySpec {
    pub fn polynomial(&self) -> Result<Polynomial> {
        match self {
            NonlinearitySpec::Polynomial { coeffs } => {
                if coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidArgument("non-finite polynomial coefficient".into()));
                }
                Ok(Polynomial::new(coeffs.clone()))
            }
            NonlinearitySpec::Cubic { kappa } => Ok(Polynomial::new(vec![0.0, -kappa, 0.0, 1.0])),
            NonlinearitySpec::Zero => Ok(Polynomial::new(vec![])),
            NonlinearitySpec::Custom { name } => Err(Error::Unsupported(name.clone())),
        }
    }
}

/// Growth and dissipativity constants fitted for a polynomial `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityReport {
    /// Smallest `rho` with `|f''(u)| <= C (|u|^(rho-1) + 1)`.
    pub rho: f64,
    pub growth_constant: f64,
    /// `nu` in `F(u) >= -nu u^2 - C` and `f(u) u - F(u) >= -nu u^2 - C`.
    pub nu: f64,
    pub dissipativity_constant: f64,
    pub nu_cap: f64,
    pub strict_growth: bool,
    pub dissipative: bool,
    pub compliant: bool,
    pub notes: Vec<String>,
}

/// Leading behaviour of `q(u) + nu u^2` as `|u| -> inf`: true if bounded below.
fn bounded_below_with(q: &[f64], nu: f64) -> bool {
    let mut c = q.to_vec();
    if c.len() < 3 {
        c.resize(3, 0.0);
    }
    c[2] += nu;
    while c.len() > 1 && c.last().is_some_and(|x| x.abs() < 1e-300) {
        c.pop();
    }
    let d = c.len() - 1;
    match d {
        0 => true,
        _ if d % 2 == 1 => false,
        _ => c[d] > 0.0,
    }
}

fn fitted_deficit(q: &[f64], nu: f64, grid: &[f64]) -> f64 {
    let g = |u: f64| -(Polynomial::horner(q, u) + nu * u * u);
    let h = grid[1] - grid[0];
    let mut best = 0.0f64;
    for &u in grid {
        let v = g(u);
        if v > best - 1e-3 {
            // golden-section polish of the local maximum
            let (mut lo, mut hi) = (u - h, u + h);
            for _ in 0..60 {
                let m1 = hi - 0.618_033_988_75 * (hi - lo);
                let m2 = lo + 0.618_033_988_75 * (hi - lo);
                if g(m1) < g(m2) {
                    lo = m1;
                } else {
                    hi = m2;
                }
            }
            best = best.max(v).max(g(0.5 * (lo + hi)));
        }
    }
    best
}

/// Check `f` against the growth restriction and both dissipativity conditions.
pub fn validate_nonlinearity(
    spec: &NonlinearitySpec,
    basis: &SpectralBasis,
    gamma: f64,
) -> Result<NonlinearityReport> {
    let p = spec.polynomial()?;
    let lambda1 = basis.eigenvalues()[0];
    let nu_cap = lambda1.min(gamma) / 8.0;
    let d = p.degree();
    let mut notes = Vec::new();

    let grid: Vec<f64> = (-20000..=20000).map(|k| k as f64 * 2.5e-3).collect();
    let (rho, growth_constant) = if d <= 2 || p.is_zero() {
        let c = if p.is_zero() { 0.0 } else { p.second_derivative(0.0).abs() };
        (0.0, c)
    } else {
        let rho = (d - 1) as f64;
        // the ratio tends to the leading coefficient of f'' at infinity
        let lead = (d * (d - 1)) as f64 * p.coeffs[d].abs();
        let c = grid
            .iter()
            .map(|&u| p.second_derivative(u).abs() / (u.abs().powf(rho - 1.0) + 1.0))
            .fold(lead, f64::max);
        (rho, c)
    };
    let strict_growth = rho < 2.0;
    if !strict_growth {
        notes.push(format!(
            "growth exponent rho = {rho} violates rho < 2; that restriction serves the 3-D Sobolev embedding and is not binding on an interval"
        ));
    }

    let big_f = p.primitive_coeffs();
    // f(u) u - F(u)
    let mut second = vec![0.0; big_f.len()];
    for (k, c) in p.coeffs.iter().enumerate() {
        second[k + 1] += c;
    }
    for (k, c) in big_f.iter().enumerate() {
        second[k] -= c;
    }

    let admissible = |nu: f64| bounded_below_with(&big_f, nu) && bounded_below_with(&second, nu);
    let nu = if admissible(0.0) {
        0.0
    } else if admissible(nu_cap) && nu_cap > 0.0 {
        nu_cap
    } else {
        // need quadratic coefficient dominance: nu > -(coefficient of u^2)
        let need = -(big_f.get(2).copied().unwrap_or(0.0)).min(second.get(2).copied().unwrap_or(0.0));
        let nu = need.max(0.0) * (1.0 + 1e-9) + 1e-12;
        if admissible(nu) {
            nu
        } else {
            f64::INFINITY
        }
    };
    let (dissipativity_constant, dissipative) = if nu.is_finite() {
        let c = fitted_deficit(&big_f, nu, &grid).max(fitted_deficit(&second, nu, &grid));
        (c, nu <= nu_cap)
    } else {
        notes.push("no finite nu bounds F from below".into());
        (f64::INFINITY, false)
    };
    if nu.is_finite() && !dissipative {
        notes.push(format!("nu = {nu} exceeds (lambda_1 min gamma)/8 = {nu_cap}"));
    }
    Ok(NonlinearityReport {
        rho,
        growth_constant,
        nu,
        dissipativity_constant,
        nu_cap,
        strict_growth,
        dissipative,
        compliant: dissipative,
        notes,
    })
}

/// Plain-data description of a model, as read from configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub gamma: f64,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub nonlinearity: NonlinearitySpec,
    /// Forcing coefficients; missing trailing modes are zero.
    #[serde(default)]
    pub h: Vec<f64>,
    pub n_modes: usize,
    #[serde(default)]
    pub domain_length: Option<f64>,
    #[serde(default)]
    pub noise: NoiseParams,
    #[serde(default)]
    pub ceiling: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum NoiseParams {
    /// `b_j = scale * j^(-exponent)`
    PowerLaw { exponent: f64, scale: f64 },
    Explicit { b: Vec<f64> },
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams::PowerLaw {
            exponent: 2.0,
            scale: 1.0,
        }
    }
}

impl NoiseParams {
    pub fn build(&self, n: usize) -> Result<NoiseSpec> {
        match self {
            NoiseParams::PowerLaw { exponent, scale } => NoiseSpec::power_law(n, *exponent, *scale),
            NoiseParams::Explicit { b } => {
                if b.len() != n {
                    return Err(Error::SizeMismatch {
                        expected: n,
                        got: b.len(),
                    });
                }
                NoiseSpec::new(b.clone(), "explicit")
            }
        }
    }
}

/// Fully resolved model: basis, nonlinearity, forcing and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    gamma: f64,
    alpha: f64,
    spec: NonlinearitySpec,
    f: Polynomial,
    h: Vec<f64>,
    basis: SpectralBasis,
    noise: NoiseSpec,
    report: NonlinearityReport,
    ceiling: f64,
}

pub const DEFAULT_CEILING: f64 = 1e6;

impl ModelConfig {
    pub fn new(
        gamma: f64,
        nonlinearity: NonlinearitySpec,
        h: Vec<f64>,
        n_modes: usize,
        noise: NoiseSpec,
    ) -> Result<Self> {
        Self::build(gamma, None, nonlinearity, h, n_modes, std::f64::consts::PI, noise, DEFAULT_CEILING)
    }

    pub fn from_params(p: &ModelParams) -> Result<Self> {
        let noise = p.noise.build(p.n_modes)?;
        Self::build(
            p.gamma,
            p.alpha,
            p.nonlinearity.clone(),
            p.h.clone(),
            p.n_modes,
            p.domain_length.unwrap_or(std::f64::consts::PI),
            noise,
            p.ceiling.unwrap_or(DEFAULT_CEILING),
        )
    }

    /// Double-well demo: `f(u) = u^3 - 2.5 u`, `h = 0`, eight modes.
    pub fn double_well() -> Self {
        let noise = NoiseSpec::power_law(8, 2.0, DOUBLE_WELL_NOISE_SCALE).expect("positive");
        Self::new(0.5, NonlinearitySpec::Cubic { kappa: 2.5 }, vec![], 8, noise).expect("valid")
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        gamma: f64,
        alpha: Option<f64>,
        spec: NonlinearitySpec,
        mut h: Vec<f64>,
        n_modes: usize,
        length: f64,
        noise: NoiseSpec,
        ceiling: f64,
    ) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
        let f = spec.polynomial()?;
        let basis = SpectralBasis::for_degree(length, n_modes, f.degree().max(2))?;
        if h.len() > n_modes {
            return Err(Error::SizeMismatch {
                expected: n_modes,
                got: h.len(),
            });
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite forcing coefficient".into()));
        }
        h.resize(n_modes, 0.0);
        if noise.len() != n_modes {
            return Err(Error::SizeMismatch {
                expected: n_modes,
                got: noise.len(),
            });
        }
        let lambda1 = basis.eigenvalues()[0];
        let alpha = alpha.unwrap_or(0.1 * gamma.min(lambda1 / gamma));
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        if !(ceiling > 0.0) {
            return Err(Error::InvalidArgument("divergence ceiling must be positive".into()));
        }
        let report = validate_nonlinearity(&spec, &basis, gamma)?;
        Ok(Self {
            gamma,
            alpha,
            spec,
            f,
            h,
            basis,
            noise,
            report,
            ceiling,
        })
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Result<Self> {
        if noise.len() != self.basis.n_modes() {
            return Err(Error::SizeMismatch {
                expected: self.basis.n_modes(),
                got: noise.len(),
            });
        }
        self.noise = noise;
        Ok(self)
    }

    pub fn with_ceiling(mut self, ceiling: f64) -> Self {
        self.ceiling = ceiling;
        self
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn nonlinearity_spec(&self) -> &NonlinearitySpec {
        &self.spec
    }
    pub fn nonlinearity(&self) -> &Polynomial {
        &self.f
    }
    pub fn h(&self) -> &[f64] {
        &self.h
    }
    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }
    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }
    pub fn report(&self) -> &NonlinearityReport {
        &self.report
    }
    pub fn ceiling(&self) -> f64 {
        self.ceiling
    }
    pub fn n_modes(&self) -> usize {
        self.basis.n_modes()
    }

    /// Modal coefficients of `f(u)` for position coefficients `a`.
    pub fn nonlinear_term(&self, a: &[f64]) -> Vec<f64> {
        let mut g = self.basis.to_physical(a).expect("length checked by caller");
        g.iter_mut().for_each(|u| *u = self.f.eval(*u));
        self.basis.from_physical(&g).expect("grid length")
    }

    /// Residual `-Laplacian u + f(u) - h` in modal form.
    pub fn stationary_residual(&self, a: &[f64]) -> Vec<f64> {
        let fa = self.nonlinear_term(a);
        a.iter()
            .zip(self.basis.eigenvalues())
            .zip(fa.iter().zip(&self.h))
            .map(|((x, l), (f, h))| l * x + f - h)
            .collect()
    }

    /// Galerkin matrix of multiplication by `f'(u)` , row-major `N x N`.
    pub fn derivative_matrix(&self, a: &[f64]) -> Vec<f64> {
        let n = self.n_modes();
        let u = self.basis.to_physical(a).expect("length");
        let fp: Vec<f64> = u.iter().map(|&x| self.f.derivative(x)).collect();
        let w = self.basis.weight();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            let ei = self.basis.mode_samples(i);
            for j in i..n {
                let ej = self.basis.mode_samples(j);
                let s: f64 = ei.iter().zip(ej).zip(&fp).map(|((x, y), d)| x * y * d).sum();
                m[i * n + j] = w * s;
                m[j * n + i] = w * s;
            }
        }
        m
    }
}

/// Noise amplitude `b_1` of the double-well demo.
pub const DOUBLE_WELL_NOISE_SCALE: f64 = 1.2;

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> SpectralBasis {
        SpectralBasis::new(4).unwrap()
    }

    #[test]
    fn polynomial_calculus() {
        let p = Polynomial::new(vec![0.0, -1.0, 0.0, 1.0]);
        assert_eq!(p.eval(2.0), 6.0);
        assert_eq!(p.derivative(2.0), 11.0);
        assert_eq!(p.second_derivative(2.0), 12.0);
        assert!((p.primitive(2.0) - (4.0 - 2.0)).abs() < 1e-14);
        assert_eq!(p.primitive(0.0), 0.0);
    }

    #[test]
    fn cubic_minus_u_has_rho_two() {
        let r = validate_nonlinearity(&NonlinearitySpec::Cubic { kappa: 1.0 }, &basis(), 0.5).unwrap();
        assert_eq!(r.rho, 2.0);
        assert!(!r.strict_growth);
        assert!(r.notes.iter().any(|n| n.contains("3-D")));
        assert!((r.growth_constant - 6.0).abs() < 1e-9);
        assert!(r.dissipative);
    }

    #[test]
    fn zero_nonlinearity_is_compliant() {
        let r = validate_nonlinearity(&NonlinearitySpec::Zero, &basis(), 0.5).unwrap();
        assert_eq!(r.nu, 0.0);
        assert_eq!(r.dissipativity_constant, 0.0);
        assert!(r.strict_growth && r.compliant);
    }

    #[test]
    fn pure_cubic_needs_no_constants() {
        let spec = NonlinearitySpec::Polynomial {
            coeffs: vec![0.0, 0.0, 0.0, 1.0],
        };
        let r = validate_nonlinearity(&spec, &basis(), 0.5).unwrap();
        assert_eq!(r.nu, 0.0);
        assert_eq!(r.dissipativity_constant, 0.0);
    }

    #[test]
    fn double_well_constants() {
        // F = u^4/4 - 1.25 u^2 has minimum -25/16 at u^2 = 2.5
        let r = validate_nonlinearity(&NonlinearitySpec::Cubic { kappa: 2.5 }, &basis(), 0.5).unwrap();
        assert_eq!(r.nu, 0.0);
        assert!(r.dissipativity_constant >= 25.0 / 16.0 - 1e-6);
        // f u - F = 3u^4/4 - 1.25 u^2 has minimum -25/48
        assert!((r.dissipativity_constant - 25.0 / 16.0).abs() < 1e-4);
    }

    #[test]
    fn anti_dissipative_rejected() {
        let spec = NonlinearitySpec::Polynomial {
            coeffs: vec![0.0, 0.0, 0.0, -1.0],
        };
        let r = validate_nonlinearity(&spec, &basis(), 0.5).unwrap();
        assert!(!r.compliant);
        let spec = NonlinearitySpec::Custom { name: "sin".into() };
        assert!(matches!(
            validate_nonlinearity(&spec, &basis(), 0.5),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn default_alpha_rule() {
        let cfg = ModelConfig::double_well();
        assert!((cfg.alpha() - 0.05).abs() < 1e-15);
        let cfg = ModelConfig::new(4.0, NonlinearitySpec::Zero, vec![], 2, NoiseSpec::default_for(2)).unwrap();
        assert!((cfg.alpha() - 0.025).abs() < 1e-15);
        assert!(ModelConfig::new(0.0, NonlinearitySpec::Zero, vec![], 2, NoiseSpec::default_for(2)).is_err());
    }
}
