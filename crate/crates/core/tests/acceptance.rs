//! One PASS/FAIL line per acceptance criterion.
//!
//! `cargo test --test acceptance -- 3 5` runs a subset. The process exits
//! non-zero on a failed criterion only when `ACCEPTANCE_STRICT` is set.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erf;

use nlw_ldp::action::{quasipotential, MamOptions, Objective};
use nlw_ldp::dynamics::{feedback_control, find_equilibria, FeedbackOptions, ModelConfig, NonlinearitySpec};
use nlw_ldp::graph::{rate_function, w_value, QuasipotentialMatrix};
use nlw_ldp::harness::{emit, ldp_verify, transition_vs_vtilde, Budget, ExperimentConfig, Format, Pipeline};
use nlw_ldp::stats::ols;
use nlw_ldp::stochastic::{estimate_stationary, exponential_moment_check, Event, MomentOptions, StationaryOptions};
use nlw_ldp::{action_j, NoiseSpec, State};

const SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Runs `f`, turning a panic into a failed outcome for every slot.
fn guarded<const K: usize>(f: impl FnOnce() -> [Outcome; K]) -> [Outcome; K] {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        std::array::from_fn(|_| outcome(false, format!("panicked: {msg}")))
    })
}

fn out_dir(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    fs::create_dir_all(&d).unwrap();
    d
}

fn double_well_experiment() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/double_well.toml");
    ExperimentConfig::load(&path).unwrap()
}

fn linear_single_mode() -> ModelConfig {
    ModelConfig::new(0.5, NonlinearitySpec::Zero, vec![], 1, NoiseSpec::new(vec![1.0], "explicit").unwrap()).unwrap()
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, v: &T) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap() + "\n").unwrap();
    p
}

fn linear_quasipotential(dir: &Path) -> Outcome {
    let cfg = linear_single_mode();
    let r = quasipotential(&cfg, &State::zeros(1), &State::at_rest(vec![1.0]), &MamOptions::default()).unwrap();
    write_json(dir, "mam.json", &r);
    let rel = (r.value - 0.5).abs() / 0.5;
    outcome(rel < 0.05, format!("V = {:.5}, oracle 0.5, rel. err {:.2e} (< 5e-2)", r.value, rel))
}

fn adjoint_gradient() -> Outcome {
    let cfg = ModelConfig::double_well();
    let eq = find_equilibria(&cfg).unwrap();
    let (u1, u2) = (&eq.equilibria[0].state, &eq.equilibria[1].state);
    let (n_int, n_modes, horizon) = (20, cfg.n_modes(), 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let coeffs: Vec<f64> = (0..n_int * n_modes).map(|_| rng.random_range(-0.3..0.3)).collect();
    let mut obj = Objective::new(&cfg, u1, u2, horizon, n_int, n_modes, 0.05).unwrap();
    obj.sigma = 0.1;
    let mut g = vec![0.0; obj.n_params()];
    obj.evaluate(&coeffs, Some(&mut g)).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 1e-6;
        let at = |s: f64| -> Vec<f64> { coeffs.iter().zip(&d).map(|(c, di)| c + s * di).collect() };
        let fd = (obj.evaluate(&at(h), None).unwrap().objective - obj.evaluate(&at(-h), None).unwrap().objective) / (2.0 * h);
        let ad: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        worst = worst.max((fd - ad).abs() / ad.abs().max(1e-12));
    }
    outcome(worst < 1e-4, format!("max rel. err over 20 directions {worst:.2e} (< 1e-4)"))
}

fn feedback_decay(dir: &Path) -> Outcome {
    let cfg = ModelConfig::double_well();
    let eq = find_equilibria(&cfg).unwrap();
    let opts = FeedbackOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let basis = cfg.basis();
    let alpha = cfg.alpha();
    let n = cfg.n_modes();
    let mut dir_state = State::new(
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let norm = basis.norm_h(&dir_state, alpha).unwrap();
    dir_state = dir_state.scaled(1.0 / norm);

    let mut worst: f64 = 0.0;
    let mut ranks = Vec::new();
    for e in &eq.equilibria {
        let v0 = e.state.offset(&dir_state, 0.3);
        let r = feedback_control(&v0, &e.state, 0.4, 0.1, &cfg, &opts).unwrap();
        worst = worst.max(r.max_decay_ratio);
        ranks.push(r.n_modes);
    }
    // action of the feedback control against the starting distance from the saddle
    let radii = [0.05, 0.1, 0.2, 0.4];
    let saddle = &eq.equilibria[1].state;
    let mut rows = Vec::new();
    for &r in &radii {
        let v0 = saddle.offset(&dir_state, r);
        let res = feedback_control(&v0, saddle, 1.5 * r, 0.2 * r, &cfg, &opts).unwrap();
        rows.push((r, action_j(&res.control, cfg.noise()).unwrap(), res.max_decay_ratio));
    }
    write_json(dir, "feedback.json", &rows);
    let x: Vec<f64> = rows.iter().map(|r| r.0.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    let slope = ols(&x, &y).1;
    let pass = worst <= 1.05 && (slope - 2.0).abs() <= 0.2;
    outcome(
        pass,
        format!("max decay ratio {worst:.4} (<= 1.05, N = {ranks:?}); action-vs-radius slope {slope:.3} (2 +- 0.2)"),
    )
}

fn chains_ending_at(l: usize, i: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, left: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left.is_empty() {
            out.push(prefix.clone());
        }
        for k in 0..left.len() {
            let x = left.remove(k);
            prefix.push(x);
            grow(prefix, left, out);
            prefix.pop();
            left.insert(k, x);
        }
    }
    let mut out = Vec::new();
    let mut left: Vec<usize> = (0..l).filter(|&k| k != i).collect();
    grow(&mut Vec::new(), &mut left, &mut out);
    out.into_iter()
        .map(|mut c| {
            c.push(i);
            c
        })
        .collect()
}

fn w_graph_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut mismatches = 0;
    for _ in 0..100 {
        let l = rng.random_range(1..=6);
        let m: Vec<Vec<f64>> = (0..l)
            .map(|i| (0..l).map(|j| if i == j { 0.0 } else { rng.random_range(0.0..5.0) }).collect())
            .collect();
        let v = QuasipotentialMatrix::new(m.clone()).unwrap();
        let naive: Vec<f64> = (0..l)
            .map(|i| {
                chains_ending_at(l, i)
                    .iter()
                    .map(|c| c.windows(2).map(|w| m[w[0]][w[1]]).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let wmin = naive.iter().copied().fold(f64::INFINITY, f64::min);
        for i in 0..l {
            if w_value(i, &v).unwrap().value != naive[i] {
                mismatches += 1;
            }
            let col: Vec<f64> = (0..l).map(|k| m[k][i]).collect();
            let num = (0..l).map(|k| naive[k] + col[k]).fold(f64::INFINITY, f64::min);
            if rate_function(&v, &col, None).unwrap().value != (num - wmin).max(0.0) {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches of W or rate on 100 fixtures, l <= 6"))
}

/// `P(|z| < r)` for a centred 2D Gaussian with covariance `[[s00, s01], [s01, s11]]`.
fn gaussian_disc_mass(s00: f64, s01: f64, s11: f64, r: f64) -> f64 {
    let tr = s00 + s11;
    let disc = ((s00 - s11).powi(2) + 4.0 * s01 * s01).sqrt();
    let (s1, s2) = (0.5 * (tr + disc), 0.5 * (tr - disc));
    // x = R sin(theta) removes the square-root endpoints
    let big_r = r / s1.sqrt();
    let f = |th: f64| {
        let x = big_r * th.sin();
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        pdf * erf(r * th.cos() / (2.0 * s2).sqrt()) * big_r * th.cos()
    };
    let n = 4000;
    let (a, b) = (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

fn gaussian_occupation(dir: &Path, steps: f64) -> Outcome {
    let cfg = linear_single_mode();
    let eps = 0.2;
    let dt = 0.02;
    let radii = [0.3, 0.6, 0.9];
    let events: Vec<Event> = radii.iter().map(|&r| Event::ball(State::zeros(1), r)).collect();
    let opts = StationaryOptions {
        dt,
        burn_in: 100.0,
        total_time: steps * dt,
        n_batches: 20,
        seed: SEED,
        ..Default::default()
    };
    let est = estimate_stationary(&cfg, &State::zeros(1), eps, &events, &opts).unwrap();
    write_json(dir, "occupation.json", &est);
    let alpha = cfg.alpha();
    let (va, vv) = (eps / (2.0 * 0.5), eps / (2.0 * 0.5));
    let mut pass = true;
    let mut parts = Vec::new();
    for (r, o) in radii.iter().zip(&est.occupations) {
        let mass = gaussian_disc_mass(va, alpha * va, vv + alpha * alpha * va, *r);
        let inside = o.interval.low <= mass && mass <= o.interval.high;
        pass &= inside;
        parts.push(format!("r={r}: {:.4} in [{:.4}, {:.4}]? {}", mass, o.interval.low, o.interval.high, inside));
    }
    outcome(pass, format!("{} steps; {}", est.steps, parts.join("; ")))
}

fn scaled_budget(b: &Budget, k: f64) -> Budget {
    match b {
        Budget::Uniform(t) => Budget::Uniform(t * k),
        Budget::PerEps(v) => Budget::PerEps(v.iter().map(|t| t * k).collect()),
    }
}

fn ldp_slope_and_stability(exp: &ExperimentConfig, pipe: &Pipeline, dir: &Path) -> [Outcome; 2] {
    let r = ldp_verify(exp, pipe).unwrap();
    emit(&r, dir, "ldp", Format::Both).unwrap();
    let saddle = 1;
    let b = r.ball(saddle).unwrap();
    let rel = b.rel_deviation.unwrap_or(f64::INFINITY);
    let c6 = outcome(
        rel <= 0.30,
        format!(
            "slope {} (se {}) vs V(0) = {:.4}, rel. dev {:.3} (<= 0.30), regression verdict {}",
            b.slope.map_or("n/a".into(), |s| format!("{s:.4}")),
            b.slope_se.map_or("n/a".into(), |s| format!("{s:.4}")),
            b.rate,
            rel,
            b.verdict.as_str()
        ),
    );
    let s = r.stability.expect("stability_eta is set in the config");
    emit(&s, dir, "stability", Format::Both).unwrap();
    let c7 = outcome(
        s.verdict.is_some_and(|v| v.as_str() == "consistent"),
        format!(
            "eps ln mu(E_0.3) = {:?}, Kendall S = {}, p = {:.4}",
            s.eps_ln_mu.iter().map(|y| (y * 1e4).round() / 1e4).collect::<Vec<_>>(),
            s.kendall_s,
            s.p_value
        ),
    );
    [c6, c7]
}

fn boundary_chain(exp: &ExperimentConfig, pipe: &Pipeline, dir: &Path) -> Outcome {
    let r = transition_vs_vtilde(exp, pipe, &[]).unwrap();
    emit(&r, dir, "chain", Format::Both).unwrap();
    let mut pass = !r.pairs.is_empty();
    let mut parts = Vec::new();
    for p in &r.pairs {
        let ok = p.rel_beta.is_some_and(|b| b <= 0.5);
        pass &= ok;
        parts.push(format!(
            "{}->{}: eps* {}, -eps ln P {}, V~ {:.4}, beta/V~ {}",
            p.from_equilibrium,
            p.to_equilibrium,
            p.eps_star.map_or("none".into(), |e| e.to_string()),
            p.neg_eps_ln_p.map_or("n/a".into(), |x| format!("{x:.4}")),
            p.v_tilde,
            p.rel_beta.map_or("n/a".into(), |x| format!("{x:.3}")),
        ));
    }
    outcome(pass, format!("{} (beta <= 0.5 V~)", parts.join("; ")))
}

fn moment_options(replicas: usize) -> MomentOptions {
    MomentOptions {
        replicas,
        dt: 0.01,
        sample_interval: 2.0,
        burn_in: 50.0,
        seed: SEED,
        ..Default::default()
    }
}

fn exponential_moment(dir: &Path, replicas: usize, horizon: f64) -> Outcome {
    let cfg = ModelConfig::double_well();
    let eps = 0.2;
    let threshold = cfg.alpha() / (2.0 * eps * cfg.noise().total_variance());
    let m = exponential_moment_check(&cfg, eps, 0.5 * threshold, horizon, &moment_options(replicas)).unwrap();
    write_json(dir, "moment.json", &m);
    outcome(
        m.bounded && m.reductions == 0,
        format!(
            "kappa {:.4} (threshold {:.4}), post-burn-in slope {:.2e} +- {:.2e}, no upward trend: {}",
            m.kappa, m.kappa_threshold, m.slope, m.slope_se, m.bounded
        ),
    )
}

fn determinism(exp: &ExperimentConfig, pipe: &Pipeline) -> Outcome {
    let mut small = exp.clone();
    small.sampling.total_time = scaled_budget(&exp.sampling.total_time, 0.002);
    small.chain.samples = 200;
    small.chain.eps = Some(vec![0.3]);
    let run = |tag: &str| -> Vec<PathBuf> {
        let d = out_dir(&format!("determinism/{tag}"));
        let mut files = Vec::new();
        files.push(write_json(
            &d,
            "mam.json",
            &quasipotential(&linear_single_mode(), &State::zeros(1), &State::at_rest(vec![1.0]), &MamOptions::default())
                .unwrap(),
        ));
        gaussian_occupation(&d, 1e5);
        files.push(d.join("occupation.json"));
        let r = ldp_verify(&small, pipe).unwrap();
        files.extend(emit(&r, &d, "ldp", Format::Both).unwrap());
        files.extend(emit(&transition_vs_vtilde(&small, pipe, &[]).unwrap(), &d, "chain", Format::Both).unwrap());
        exponential_moment(&d, 16, 120.0);
        files.push(d.join("moment.json"));
        files
    };
    let a = run("a");
    let b = run("b");
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| fs::read(x).unwrap() != fs::read(y).unwrap())
        .map(|(x, _)| x.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    outcome(differing.is_empty(), format!("{} files compared, differing: {differing:?}", a.len()))
}

struct Ledger {
    failed: usize,
    strict: bool,
}

impl Ledger {
    fn report(&mut self, id: usize, name: &str, limit: Option<Duration>, start: Instant, o: Outcome) {
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let pass = o.pass && in_time;
        if !pass {
            self.failed += 1;
        }
        let time = match limit {
            Some(l) => format!("{:.1}s (limit {}s)", took.as_secs_f64(), l.as_secs()),
            None => format!("{:.1}s", took.as_secs_f64()),
        };
        println!("{} [{id}] {name}: {} [{time}]", if pass { "PASS" } else { "FAIL" }, o.detail);
    }
}

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |k: usize| args.is_empty() || args.contains(&k);
    let mut ledger = Ledger {
        failed: 0,
        strict: std::env::var_os("ACCEPTANCE_STRICT").is_some(),
    };
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));

    if want(1) {
        let t = Instant::now();
        let [o] = guarded(|| [linear_quasipotential(&out_dir("c1"))]);
        ledger.report(1, "linear quasipotential", minutes(2), t, o);
    }
    if want(2) {
        let t = Instant::now();
        let [o] = guarded(|| [adjoint_gradient()]);
        ledger.report(2, "adjoint gradient", minutes(1), t, o);
    }
    if want(3) {
        let t = Instant::now();
        let [o] = guarded(|| [feedback_decay(&out_dir("c3"))]);
        ledger.report(3, "feedback control", None, t, o);
    }
    if want(4) {
        let t = Instant::now();
        let [o] = guarded(|| [w_graph_exactness()]);
        ledger.report(4, "W-graph exactness", Some(Duration::from_secs(10)), t, o);
    }
    if want(5) {
        let t = Instant::now();
        let [o] = guarded(|| [gaussian_occupation(&out_dir("c5"), 1e7)]);
        ledger.report(5, "stationary Gaussian occupation", minutes(5), t, o);
    }
    let needs_pipeline = [6, 7, 8, 10].iter().any(|&k| want(k));
    let exp = double_well_experiment();
    let pipe = needs_pipeline.then(|| {
        let t = Instant::now();
        let p = Pipeline::compute(&exp.model, &exp.mam).unwrap();
        p.write_json(&out_dir("pipeline").join("pipeline.json")).unwrap();
        println!(
            "pipeline: {} equilibria, V(0) = {:.4}, W = {:?} [{:.1}s]",
            p.equilibria.len(),
            p.rate.rate[1],
            p.rate.w,
            t.elapsed().as_secs_f64()
        );
        (p, t.elapsed())
    });
    if let Some((pipe, setup)) = &pipe {
        if want(6) || want(7) {
            let t = Instant::now() - *setup;
            let [c6, c7] = guarded(|| ldp_slope_and_stability(&exp, pipe, &out_dir("c6")));
            if want(6) {
                ledger.report(6, "LDP slope at the saddle", minutes(30), t, c6);
            }
            if want(7) {
                ledger.report(7, "stochastic stability trend", None, t, c7);
            }
        }
        if want(8) {
            let t = Instant::now() - *setup;
            let [o] = guarded(|| [boundary_chain(&exp, pipe, &out_dir("c8"))]);
            ledger.report(8, "boundary chain transitions", minutes(30), t, o);
        }
    }
    if want(9) {
        let t = Instant::now();
        let [o] = guarded(|| [exponential_moment(&out_dir("c9"), 200, 500.0)]);
        ledger.report(9, "exponential moment", None, t, o);
    }
    if let (true, Some((pipe, _))) = (want(10), &pipe) {
        let t = Instant::now();
        let [o] = guarded(|| [determinism(&exp, pipe)]);
        ledger.report(10, "determinism", None, t, o);
    }
    println!("{} criteria failed", ledger.failed);
    if ledger.strict && ledger.failed > 0 {
        std::process::exit(1);
    }
}
