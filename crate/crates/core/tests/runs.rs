use eee_core::baselines::{ga_run, pso_run, random_search, GaConfig, PsoConfig};
use eee_core::orchestrator::{run, EeeConfig};
use eee_core::validation::{
    make_problem, ErrorSpec, ExplicitComponent, ExplicitKind, ImplicitComponent, OracleReply, Problem,
};
use eee_core::Result;

fn sphere_problem(dim: usize, threshold: f64) -> Problem {
    let spec = ErrorSpec::new(dim, vec![ImplicitComponent::mean("sq", 1, 1.0)], vec![], threshold).unwrap();
    let oracle = |x: &[f64]| -> Result<OracleReply> {
        Ok(OracleReply {
            implicit: vec![x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum()],
            overall: None,
        })
    };
    Problem::new("sphere", spec, Box::new(oracle))
}

fn small_eee() -> EeeConfig {
    let mut cfg = EeeConfig::default();
    cfg.estimator.hidden = 16;
    cfg.seeds = 8;
    cfg.initial_samples = 8;
    cfg.budget = 12;
    cfg.candidates = 32;
    cfg
}

#[test]
fn eee_run_is_deterministic() {
    let a = run(&mut make_problem("p2-cycle11", 3).unwrap(), &small_eee(), 9).unwrap();
    let b = run(&mut make_problem("p2-cycle11", 3).unwrap(), &small_eee(), 9).unwrap();
    assert_eq!(a, b);
    let c = run(&mut make_problem("p2-cycle11", 3).unwrap(), &small_eee(), 10).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn zero_budget_fails_without_post_init_queries() {
    let spec = ErrorSpec::new(
        2,
        vec![ImplicitComponent::mean("e", 1, 1.0)],
        vec![ExplicitComponent::mean("e_b", ExplicitKind::Boundary, 2, 0.1)],
        1e-9,
    )
    .unwrap();
    let oracle = |_: &[f64]| -> Result<OracleReply> {
        Ok(OracleReply {
            implicit: vec![0.5],
            overall: None,
        })
    };
    let mut p = Problem::new("flat", spec, Box::new(oracle));
    let cfg = EeeConfig {
        budget: 0,
        ..small_eee()
    };
    let r = run(&mut p, &cfg, 1).unwrap();
    assert!(!r.success);
    assert_eq!((r.post_init_queries, r.rounds), (0, 0));
    assert_eq!(p.queries(), cfg.initial_samples as u64);
}

#[test]
fn eee_queries_are_conserved_and_bounded() {
    for name in ["p1-spectra2", "p3-actuator20", "p4-pwm30"] {
        let mut p = make_problem(name, 4).unwrap();
        let cfg = small_eee();
        let r = run(&mut p, &cfg, 2).unwrap();
        assert_eq!(p.queries(), r.initial_queries + r.explore_queries + r.gate_fires, "{name}");
        assert_eq!(r.post_init_queries, r.explore_queries + r.gate_fires);
        assert!(r.post_init_queries <= cfg.budget);
        assert!(r.rounds <= cfg.r_max);
        if r.success {
            assert!(r.final_e_o < p.spec().threshold());
        }
    }
}

#[test]
fn pso_and_ga_solve_the_sphere() {
    let (mut pso_ok, mut ga_ok) = (0, 0);
    for s in 0..20 {
        let mut p = sphere_problem(5, 1e-2);
        pso_ok += pso_run(&mut p, &PsoConfig::new(20, 500), s).unwrap().success as usize;
        let mut p = sphere_problem(5, 1e-2);
        ga_ok += ga_run(&mut p, &GaConfig::new(20, 500), s).unwrap().success as usize;
    }
    assert!(pso_ok >= 18, "pso solved {pso_ok}/20");
    assert!(ga_ok >= 18, "ga solved {ga_ok}/20");
}

#[test]
fn ga_stops_at_the_injected_acceptance() {
    for at in [1u64, 7, 20, 21, 63] {
        let mut calls = 0u64;
        let spec = ErrorSpec::new(3, vec![ImplicitComponent::mean("e", 1, 1.0)], vec![], 0.5).unwrap();
        let oracle = move |_: &[f64]| -> Result<OracleReply> {
            calls += 1;
            let e = if calls == at { 0.0 } else { 1.0 };
            Ok(OracleReply {
                implicit: vec![e],
                overall: None,
            })
        };
        let mut p = Problem::new("inject", spec, Box::new(oracle));
        let r = ga_run(&mut p, &GaConfig::new(10, 100), 3).unwrap();
        assert!(r.success);
        assert_eq!(r.queries_to_success, Some(at));
        assert_eq!(p.queries(), at);
    }
}

#[test]
fn baselines_report_their_best_state() {
    let mut p = sphere_problem(4, 1e-12);
    let r = random_search(&mut p, 50, 8).unwrap();
    assert!(!r.success);
    let e: f64 = r.best_state.iter().map(|v| (v - 0.5) * (v - 0.5)).sum();
    assert!((e - r.final_e_o).abs() < 1e-12);
    assert_eq!(p.queries(), 50);
}
