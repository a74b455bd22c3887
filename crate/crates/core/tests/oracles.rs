//! Closed-form checks on the linear model `ä + gamma ȧ + lambda a = sqrt(eps) b xi`.

use nlw_ldp::action::{action_gradient, quasipotential, MamOptions};
use nlw_ldp::dynamics::{ModelConfig, NonlinearitySpec};
use nlw_ldp::stochastic::{exponential_moment_check, simulate, MomentOptions};
use nlw_ldp::{action_j, ControlPath, NoiseSpec, State};
use proptest::prelude::*;

fn linear(gamma: f64, b: Vec<f64>) -> ModelConfig {
    let n = b.len();
    ModelConfig::new(gamma, NonlinearitySpec::Zero, vec![], n, NoiseSpec::new(b, "explicit").unwrap()).unwrap()
}

/// Stationary `(Var a, Var v)` of one mode per unit noise: `b^2 / (2 gamma lambda)` and `b^2 / (2 gamma)`.
fn stationary_variances(gamma: f64, lambda: f64, b: f64) -> (f64, f64) {
    (b * b / (2.0 * gamma * lambda), b * b / (2.0 * gamma))
}

#[test]
fn path_variance_matches_lyapunov() {
    let cfg = linear(0.5, vec![1.0, 0.5]);
    let eps = 0.2;
    let tr = simulate(&cfg, &State::zeros(2), eps, 2.0e4, 0.02, 11, 5).unwrap();
    let skip = tr.len() / 50;
    for (j, lambda) in [(0usize, 1.0), (1, 4.0)] {
        let b = cfg.noise().b[j];
        let (va, vv) = stationary_variances(0.5, lambda, b);
        let xs: Vec<f64> = tr.states[skip..].iter().map(|s| s.position[j]).collect();
        let ys: Vec<f64> = tr.states[skip..].iter().map(|s| s.velocity[j]).collect();
        let var = |z: &[f64]| z.iter().map(|x| x * x).sum::<f64>() / z.len() as f64;
        assert!((var(&xs) / (eps * va) - 1.0).abs() < 0.1, "mode {j}: {}", var(&xs) / (eps * va));
        assert!((var(&ys) / (eps * vv) - 1.0).abs() < 0.1, "mode {j}: {}", var(&ys) / (eps * vv));
    }
}

#[test]
fn exponential_moment_of_gaussian_energy() {
    let cfg = linear(0.5, vec![1.0]);
    let eps = 0.1;
    let alpha = cfg.alpha();
    let kappa = 0.5 * alpha / (2.0 * eps * cfg.noise().total_variance());
    let opts = MomentOptions {
        replicas: 400,
        dt: 0.02,
        sample_interval: 5.0,
        burn_in: 40.0,
        seed: 5,
        ..Default::default()
    };
    let m = exponential_moment_check(&cfg, eps, kappa, 60.0, &opts).unwrap();
    assert_eq!(m.reductions, 0);
    // z = (sqrt(lambda) a, v + alpha a) is Gaussian; E exp(kappa |z|^2) = det(I - 2 kappa S)^(-1/2)
    let (va, vv) = stationary_variances(0.5, 1.0, 1.0);
    let (va, vv) = (eps * va, eps * vv);
    let s = [va, alpha * va, vv + alpha * alpha * va];
    let det = (1.0 - 2.0 * kappa * s[0]) * (1.0 - 2.0 * kappa * s[2]) - 4.0 * kappa * kappa * s[1] * s[1];
    let exact = det.powf(-0.5);
    let last = m.mean.len() - 1;
    assert!((m.mean[last] - exact).abs() < 4.0 * m.std_err[last] + 1e-3, "{} vs {exact}", m.mean[last]);
    assert!(m.bounded);
}

#[test]
fn adjoint_matches_differences_on_linear_model() {
    let cfg = linear(0.5, vec![1.0]);
    let target = State::at_rest(vec![1.0]);
    let phi = ControlPath::constant(2.0, &[0.3]).unwrap().refined(4);
    let (e, g) = action_gradient(&cfg, &phi, &State::zeros(1), &target, 0.0, 1.0, 0.01).unwrap();
    let h = 1e-6;
    for k in 0..phi.n_intervals() {
        let mut p = phi.clone();
        p.coeffs_mut()[k] += h;
        let mut m = phi.clone();
        m.coeffs_mut()[k] -= h;
        let fp = action_gradient(&cfg, &p, &State::zeros(1), &target, 0.0, 1.0, 0.01).unwrap().0.objective;
        let fm = action_gradient(&cfg, &m, &State::zeros(1), &target, 0.0, 1.0, 0.01).unwrap().0.objective;
        let fd = (fp - fm) / (2.0 * h);
        assert!((fd - g.coeffs()[k]).abs() < 1e-6, "interval {k}: {fd} vs {}", g.coeffs()[k]);
    }
    assert!(e.gap > 0.0);
}

#[test]
fn linear_quasipotential_scales_with_target() {
    let cfg = linear(0.5, vec![1.0]);
    for a in [0.5, 1.5] {
        let r = quasipotential(&cfg, &State::zeros(1), &State::at_rest(vec![a]), &MamOptions::default()).unwrap();
        let exact = 0.5 * a * a;
        assert!((r.value / exact - 1.0).abs() < 0.06, "a = {a}: {}", r.value);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn action_is_quadratic(c in -4.0f64..4.0, coeffs in proptest::collection::vec(-2.0f64..2.0, 6)) {
        let noise = NoiseSpec::power_law(3, 2.0, 1.0).unwrap();
        let phi = ControlPath::new(1.5, 2, 3, coeffs.clone()).unwrap();
        let scaled = ControlPath::new(1.5, 2, 3, coeffs.iter().map(|x| c * x).collect()).unwrap();
        let a = action_j(&phi, &noise).unwrap();
        let b = action_j(&scaled, &noise).unwrap();
        prop_assert!((b - c * c * a).abs() <= 1e-12 * (1.0 + b.abs()));
        prop_assert!(a >= 0.0);
    }
}
