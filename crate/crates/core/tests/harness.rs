use nlw_ldp::dynamics::{find_equilibria, ModelConfig, NoiseParams, NonlinearitySpec};
use nlw_ldp::graph::QuasipotentialMatrix;
use nlw_ldp::harness::{
    emit, event_trend, ldp_verify, read_report, transition_vs_vtilde, ExperimentConfig, Format, LdpReport, Pipeline,
    Report, TransitionReport, Verdict,
};
use nlw_ldp::stochastic::Event;
use nlw_ldp::State;

/// `f(u) = u^3 - u/2` on two modes: the origin is the only equilibrium.
fn single_well() -> (ExperimentConfig, Pipeline) {
    let mut exp = ExperimentConfig::double_well();
    exp.seed = 3;
    exp.model.n_modes = 2;
    exp.model.nonlinearity = NonlinearitySpec::Cubic { kappa: 0.5 };
    exp.model.noise = NoiseParams::Explicit { b: vec![0.2, 0.05] };
    exp.eps = vec![0.3, 0.2, 0.1];
    exp.sampling.total_time = nlw_ldp::harness::Budget::Uniform(2000.0);
    exp.sampling.burn_in = 20.0;
    exp.neighborhoods.stability_eta = Some(0.3);
    let cfg = ModelConfig::from_params(&exp.model).unwrap();
    let eq = find_equilibria(&cfg).unwrap();
    assert_eq!(eq.len(), 1);
    let pipe = Pipeline::from_matrix(exp.model.clone(), eq, QuasipotentialMatrix::new(vec![vec![0.0]]).unwrap()).unwrap();
    (exp, pipe)
}

fn double_well_pipeline(exp: &ExperimentConfig) -> Pipeline {
    let cfg = ModelConfig::from_params(&exp.model).unwrap();
    let eq = find_equilibria(&cfg).unwrap();
    assert_eq!(eq.len(), 3);
    let v = 0.93;
    let raw = vec![vec![0.0, v, 2.0 * v], vec![0.0, 0.0, 0.0], vec![2.0 * v, v, 0.0]];
    Pipeline::from_matrix(exp.model.clone(), eq, QuasipotentialMatrix::new(raw).unwrap()).unwrap()
}

#[test]
fn single_well_occupation_has_zero_rate() {
    let (exp, pipe) = single_well();
    let r = ldp_verify(&exp, &pipe).unwrap();
    assert_eq!(r.cells.len(), exp.eps.len());
    assert_eq!(r.csv_rows().len(), exp.eps.len() * r.balls.len());
    let b = r.ball(0).unwrap();
    assert_eq!(b.rate, 0.0);
    assert_eq!(b.verdict, Verdict::Consistent, "{b:?}");
    assert!(b.slope.unwrap().abs() < 0.05);
    for c in &r.cells {
        assert!(c.ci_low <= c.mu_hat && c.mu_hat <= c.ci_high);
        assert!(c.mu_hat > 0.9);
    }
    let s = r.stability.as_ref().unwrap();
    assert_eq!(s.eps, exp.eps);
    assert!(s.eps_ln_mu.iter().all(|y| *y <= 0.0));
}

#[test]
fn whole_space_has_full_mass() {
    let (exp, pipe) = single_well();
    let r = event_trend(&exp, &pipe, &Event::whole(2), "whole", f64::INFINITY).unwrap();
    assert!(r.eps_ln_mu.iter().all(|y| *y == 0.0));
    assert_eq!(r.verdict, Some(Verdict::Consistent));
}

#[test]
fn far_ball_is_exponentially_rare() {
    let (exp, pipe) = single_well();
    let far = Event::ball(State::at_rest(vec![0.9, 0.0]), 0.2);
    let r = event_trend(&exp, &pipe, &far, "far", 0.2).unwrap();
    assert!(r.eps_ln_mu.iter().all(|y| *y < 0.0), "{:?}", r.eps_ln_mu);
    assert_ne!(r.verdict, Some(Verdict::Consistent));
}

#[test]
fn same_seed_gives_identical_files() {
    let (exp, pipe) = single_well();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = ldp_verify(&exp, &pipe).unwrap();
    let rb = ldp_verify(&exp, &pipe).unwrap();
    let fa = emit(&ra, a.path(), "ldp", Format::Both).unwrap();
    let fb = emit(&rb, b.path(), "ldp", Format::Both).unwrap();
    assert_eq!(fa.len(), 2);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let json = fa.iter().find(|p| p.extension().is_some_and(|e| e == "json")).unwrap();
    let back: LdpReport = read_report(json).unwrap();
    assert_eq!(back, ra);

    let mut other = exp.clone();
    other.seed += 1;
    let rc = ldp_verify(&other, &pipe).unwrap();
    assert_ne!(rc.cells, ra.cells);
}

#[test]
fn well_to_well_transitions_are_sampled() {
    let mut exp = ExperimentConfig::double_well();
    exp.seed = 11;
    exp.neighborhoods.stable_only = true;
    exp.chain.eps = Some(vec![0.3]);
    exp.chain.samples = 150;
    exp.chain.min_hits = 1;
    exp.chain.max_steps = 50_000_000;
    let pipe = double_well_pipeline(&exp);
    let r: TransitionReport = transition_vs_vtilde(&exp, &pipe, &[]).unwrap();
    assert_eq!(r.centers, vec![0, 2]);
    assert_eq!(r.pairs.len(), 2);
    assert_eq!(r.cells.len(), 2);
    for c in &r.cells {
        assert_eq!(c.trials, 150);
        assert!(!c.partial);
        assert!(c.ci_low <= c.p_hat && c.p_hat <= c.ci_high);
        // closed V(-u, +u) passes through the saddle
        assert!((c.v_tilde - 0.93).abs() < 1e-12);
        assert!(c.p_hat < 0.5);
    }
    let again = transition_vs_vtilde(&exp, &pipe, &[]).unwrap();
    assert_eq!(again, r);
}
