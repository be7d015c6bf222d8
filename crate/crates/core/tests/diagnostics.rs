use dwave::diagnostics::{DiagnosticOperators, BOUNDARY_TERM_IDENTITY, MULTIPLIER_IDENTITY};
use dwave::dynamics::{simulate_observed, State};
use dwave::*;

const LEVELS: [(usize, f64); 3] = [(128, 2e-3), (256, 1e-3), (512, 5e-4)];

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

#[test]
fn reference_identities_converge_under_refinement() {
    let p = CoefficientProfile::power_law(0.5, 0.1, 1.0, 0.25, 0.08, 1.0).unwrap();
    let w = feller_weight(&p).unwrap();
    let [mult, bt] = identity_refinement(&p, &w, &LEVELS, &InitialData::Ramp, 1.0, 10.0).unwrap();
    assert_eq!(mult.identity_name, MULTIPLIER_IDENTITY);
    assert_eq!(bt.identity_name, BOUNDARY_TERM_IDENTITY);
    for r in [&mult, &bt] {
        assert_eq!(r.refinement_trend.len(), 3);
        assert!(strictly_decreasing(&r.refinement_trend), "{:?}", r.refinement_trend);
        assert!(r.residual <= 1e-2);
        // first order in the joint refinement
        let ratio = r.refinement_trend[1] / r.refinement_trend[2];
        assert!(ratio > 1.8, "{ratio}");
    }
}

#[test]
fn drift_free_zero_lambda_run_has_vanishing_extra_terms() {
    let p = CoefficientProfile::power_law(0.5, 0.0, 1.0, 0.25, 0.0, 1.0).unwrap();
    let w = feller_weight(&p).unwrap();
    let mesh = build_mesh(64, &p).unwrap();
    let m = assemble(&p, &w, &mesh).unwrap();
    let ops = DiagnosticOperators::new(&p, &w, &m, 4).unwrap();
    let s = initial_state(&InitialData::Bump, &mesh).unwrap();
    let terms = ops.sample(&s);
    assert_eq!(terms.gradient_drift, 0.0);
    assert!(terms.gradient > 0.0);
    let [mult, bt] =
        identity_refinement(&p, &w, &[(64, 4e-3), (128, 2e-3), (256, 1e-3)], &InitialData::Ramp, 1.0, 5.0).unwrap();
    assert!(strictly_decreasing(&mult.refinement_trend), "{:?}", mult.refinement_trend);
    assert!(strictly_decreasing(&bt.refinement_trend), "{:?}", bt.refinement_trend);
}

#[test]
fn nearly_nondegenerate_limit_still_converges() {
    let p = CoefficientProfile::power_law(0.01, 0.1, 1.0, 0.25, 0.05, 1.0).unwrap();
    let w = feller_weight(&p).unwrap();
    let [_, bt] =
        identity_refinement(&p, &w, &[(64, 4e-3), (128, 2e-3), (256, 1e-3)], &InitialData::Ramp, 1.0, 5.0).unwrap();
    assert!(strictly_decreasing(&bt.refinement_trend), "{:?}", bt.refinement_trend);
}

#[test]
fn zero_solution_gives_zero_residuals() {
    let p = CoefficientProfile::power_law(0.5, 0.1, 1.0, 0.25, 0.05, 1.0).unwrap();
    let w = feller_weight(&p).unwrap();
    let m = assemble(&p, &w, &build_mesh(32, &p).unwrap()).unwrap();
    let [mult, bt] = stream_identities(&p, &w, &m, &State::zeros(32), 0.01, 0.5, 1.0).unwrap();
    assert_eq!((mult.lhs, mult.rhs, mult.residual), (0.0, 0.0, 0.0));
    assert_eq!(bt.residual, 0.0);
}

#[test]
fn horizon_and_stride_are_enforced() {
    let p = CoefficientProfile::power_law(0.5, 0.1, 1.0, 0.25, 0.05, 1.0).unwrap();
    let w = feller_weight(&p).unwrap();
    let m = assemble(&p, &w, &build_mesh(32, &p).unwrap()).unwrap();
    let s0 = initial_state(&InitialData::Ramp, &m.mesh).unwrap();
    let mut cfg = SimulationConfig::new(0.01, 2.0);
    let tr = simulate_observed(&m, p.lambda, 1.0, &s0, &cfg, |_| {}).unwrap();
    let g = lambda_gauge(p.lambda, &HardyConstants::from_values(0.6, 0.52), w.eta_min).unwrap();
    let h = HardyConstants::from_values(0.6, 0.52);
    let r = check_hypotheses(&p, &h).unwrap();
    let cert = compute_certificate(&r, &g, &h, &w, &p, CertificateOptions::default()).unwrap();
    assert!(matches!(trace_bound_check(&tr, &cert, 1.0, 5.0, 1.0), Err(Error::InsufficientHorizon { .. })));
    cfg.stride = 2;
    let tr = simulate_observed(&m, p.lambda, 1.0, &s0, &cfg, |_| {}).unwrap();
    assert!(matches!(trace_bound_check(&tr, &cert, 0.5, 1.0, 1.0), Err(Error::InvalidParameter(_))));
}

fn reference_bounds(lambda_sign: f64) -> (TraceBoundCase, TraceBoundCase) {
    let base = CoefficientProfile::power_law(0.5, 0.1, 1.0, 0.25, 0.0, 1.0).unwrap();
    let w = feller_weight(&base).unwrap();
    let mesh = build_mesh(256, &base).unwrap();
    let h = best_constants(&base, &w, &mesh, AssemblyOptions::default(), 3).unwrap().certified();
    let r0 = check_hypotheses(&base, &h).unwrap();
    let lambda = if lambda_sign > 0.0 { 0.05 / h.c_hp } else { 0.5 * r0.lambda_lower };
    let p = base.with_lambda(lambda);
    let r = check_hypotheses(&p, &h).unwrap();
    let g = lambda_gauge(lambda, &h, w.eta_min).unwrap();
    let cert = compute_certificate(&r, &g, &h, &w, &p, CertificateOptions::default()).unwrap();
    let m = assemble(&p, &w, &mesh).unwrap();
    let s0 = initial_state(&InitialData::Ramp, &mesh).unwrap();
    let tr = simulate_observed(&m, lambda, 1.0, &s0, &SimulationConfig::new(1e-3, 10.0), |_| {}).unwrap();
    let real = trace_bound_check(&tr, &cert, 1.0, 10.0, 1.0).unwrap();
    let forced = trace_bound_check(&tr, &cert, 1.0, 10.0, 0.01).unwrap();
    (real, forced)
}

type TraceBoundCase = dwave::diagnostics::TraceBoundReport;

#[test]
fn intermediate_bounds_hold_and_forced_violations_are_caught() {
    for sign in [1.0, -1.0] {
        let (real, forced) = reference_bounds(sign);
        assert!(real.all_hold(), "{real:?}");
        assert!(real.boundary_trace.slack > 0.0 && real.distributed_energy.slack > 0.0);
        assert!(!forced.all_hold(), "{forced:?}");
    }
}
