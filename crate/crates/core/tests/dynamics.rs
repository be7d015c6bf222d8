use approx::assert_relative_eq;
use dwave::dynamics::{dissipation_residual, simulate_observed, Scheme, Stepper};
use dwave::*;
use proptest::prelude::*;

fn reference(n: usize) -> (CoefficientProfile, OperatorMatrices) {
    let p = CoefficientProfile::power_law(0.5, 0.1, 1.0, 0.25, 0.08, 1.0).unwrap();
    let w = feller_weight(&p).unwrap();
    let m = assemble(&p, &w, &build_mesh(n, &p).unwrap()).unwrap();
    (p, m)
}

fn final_energy(m: &OperatorMatrices, p: &CoefficientProfile, dt: f64, t: f64) -> f64 {
    let w = feller_weight(p).unwrap();
    let data = InitialData::Compatible { eta_at_1: w.eta_at_1, beta_damp: p.beta_damp };
    let s0 = initial_state(&data, &m.mesh).unwrap();
    let tr = simulate_observed(m, p.lambda, p.beta_damp, &s0, &SimulationConfig::new(dt, t), |_| {}).unwrap();
    *tr.energy.last().unwrap()
}

#[test]
fn midpoint_is_second_order_in_time() {
    // steps small against the fastest mode of the coarse mesh, data compatible with the boundary condition
    let (p, m) = reference(32);
    let e: Vec<f64> = [1e-3, 5e-4, 2.5e-4].iter().map(|dt| final_energy(&m, &p, *dt, 2.0)).collect();
    let order = ((e[0] - e[1]).abs() / (e[1] - e[2]).abs()).log2();
    assert!(order >= 1.9, "observed order {order}");
}

#[test]
fn undamped_run_conserves_energy() {
    let (p, m) = reference(128);
    let s0 = initial_state(&InitialData::Bump, &m.mesh).unwrap();
    let mut cfg = SimulationConfig::new(1e-3, 1.0);
    cfg.damping = 0.0;
    let tr = simulate_observed(&m, p.lambda, p.beta_damp, &s0, &cfg, |_| {}).unwrap();
    assert_eq!(tr.len(), 1001);
    let e0 = tr.e0();
    for e in &tr.energy {
        assert!((e - e0).abs() <= 1e-12 * e0, "{e} vs {e0}");
    }
}

#[test]
fn dissipation_identity_on_reference_run() {
    let (p, m) = reference(256);
    let s0 = initial_state(&InitialData::Ramp, &m.mesh).unwrap();
    let tr = simulate_observed(&m, p.lambda, p.beta_damp, &s0, &SimulationConfig::new(1e-3, 20.0), |_| {}).unwrap();
    assert!(dissipation_residual(&tr) <= 1e-10 * tr.e0().max(1.0));
    assert!(tr.max_step_increase <= 1e-10 * tr.e0());
    assert!(tr.energy.last().unwrap() < &tr.e0());
}

#[test]
fn explicit_reference_violates_the_identity() {
    let (p, m) = reference(64);
    let s0 = initial_state(&InitialData::Bump, &m.mesh).unwrap();
    let residual = |scheme: Scheme, dt: f64| {
        let mut cfg = SimulationConfig::new(dt, 0.2);
        cfg.scheme = scheme;
        dissipation_residual(&simulate_observed(&m, p.lambda, p.beta_damp, &s0, &cfg, |_| {}).unwrap())
    };
    let implicit = residual(Scheme::ImplicitMidpoint, 1e-4);
    let explicit = residual(Scheme::ExplicitEuler, 1e-4);
    let explicit_half = residual(Scheme::ExplicitEuler, 5e-5);
    assert!(explicit > 1e3 * implicit.max(1e-16));
    // residual per step shrinks with dt
    assert!(explicit_half < explicit);
}

#[test]
fn one_step_satisfies_the_midpoint_equation() {
    let (p, m) = reference(8);
    let st = Stepper::new(&m, 0.1, p.lambda, p.beta_damp).unwrap();
    let s0 = initial_state(&InitialData::Ramp, &m.mesh).unwrap();
    let out = st.step(&s0);
    // the update satisfies B (v1 - v0)/dt = -A (y0 + y1)/2 - w_N e_N
    let a = m.coercive_operator(p.lambda, p.beta_damp);
    let ymid: Vec<f64> = s0.y.iter().zip(&out.state.y).map(|(a, b)| 0.5 * (a + b)).collect();
    let dv: Vec<f64> = s0.v.iter().zip(&out.state.v).map(|(a, b)| (b - a) / 0.1).collect();
    let lhs = m.b.mul_vec(&dv);
    let mut rhs: Vec<f64> = a.mul_vec(&ymid).iter().map(|x| -x).collect();
    *rhs.last_mut().unwrap() -= out.boundary_v_mid;
    for (l, r) in lhs.iter().zip(&rhs) {
        assert_relative_eq!(l, r, epsilon = 1e-12, max_relative = 1e-10);
    }
}

#[test]
fn still_data_stays_at_rest() {
    let (p, m) = reference(32);
    let s0 = initial_state(&InitialData::Still, &m.mesh).unwrap();
    let tr = simulate_observed(&m, p.lambda, p.beta_damp, &s0, &SimulationConfig::new(0.01, 1.0), |_| {}).unwrap();
    assert!(tr.energy.iter().all(|e| *e == 0.0));
}

#[test]
fn custom_data_must_vanish_at_the_origin() {
    let (_, m) = reference(8);
    let n = m.mesh.n + 1;
    let bad = InitialData::Custom { y: vec![1.0; n], v: vec![0.0; n] };
    assert!(matches!(initial_state(&bad, &m.mesh), Err(Error::InvalidInitialData(_))));
    let short = InitialData::Custom { y: vec![0.0; 3], v: vec![0.0; 3] };
    assert!(initial_state(&short, &m.mesh).is_err());
    let mut y = m.mesh.nodes.clone();
    y[0] = 0.0;
    let ok = initial_state(&InitialData::Custom { y, v: vec![0.0; n] }, &m.mesh).unwrap();
    assert_eq!(ok.y, initial_state(&InitialData::Ramp, &m.mesh).unwrap().y);
}

#[test]
fn stride_floor_and_budget() {
    let (p, m) = reference(32);
    let s0 = initial_state(&InitialData::Ramp, &m.mesh).unwrap();
    let mut cfg = SimulationConfig::new(0.01, 1.0);
    cfg.stride = 10;
    let tr = simulate_observed(&m, p.lambda, p.beta_damp, &s0, &cfg, |_| {}).unwrap();
    assert_eq!(tr.len(), 11);
    assert_relative_eq!(tr.times[10], 1.0, epsilon = 1e-14);

    cfg.max_steps = Some(25);
    let tr = simulate_observed(&m, p.lambda, p.beta_damp, &s0, &cfg, |_| {}).unwrap();
    assert!(tr.terminated_early);
    assert_relative_eq!(*tr.times.last().unwrap(), 0.25, epsilon = 1e-14);
    assert_eq!(tr.t_final, 1.0);

    let sim = simulate(&m, p.lambda, p.beta_damp, &s0, &cfg, true).unwrap();
    assert_eq!(sim.states.len(), sim.trace.len());
    assert_eq!(sim.states.last().unwrap().t, 0.25);
}

#[test]
fn csv_has_header_and_rows() {
    let (p, m) = reference(16);
    let s0 = initial_state(&InitialData::Ramp, &m.mesh).unwrap();
    let tr = simulate_observed(&m, p.lambda, p.beta_damp, &s0, &SimulationConfig::new(0.1, 0.5), |_| {}).unwrap();
    let csv = tr.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,E,y1,v1,diss_residual");
    assert_eq!(lines.len(), 7);
    let e: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(e, tr.e0());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_never_increases(
        alpha in 0.2..1.6f64,
        gamma_frac in 0.1..0.45f64,
        mu_frac in -0.4..0.4f64,
        beta in 0.0..5.0f64,
        lambda_frac in -0.5..0.9f64,
        dt in 1e-3..5e-2f64,
    ) {
        let gamma = gamma_frac * (2.0 - alpha);
        let mu = mu_frac * (2.0 - alpha - 2.0 * gamma);
        let p0 = CoefficientProfile::power_law(alpha, mu, alpha.max(1.0), gamma, 0.0, beta).unwrap();
        let w = feller_weight(&p0).unwrap();
        let mesh = build_mesh(32, &p0).unwrap();
        let m0 = assemble(&p0, &w, &mesh).unwrap();
        let c = dwave::spectral::best_constants_on(&m0).unwrap().c_hp;
        let p = p0.with_lambda(lambda_frac / c);
        let m = assemble(&p, &w, &mesh).unwrap();
        let s0 = initial_state(&InitialData::Bump, &mesh).unwrap();
        let tr = simulate_observed(&m, p.lambda, beta, &s0, &SimulationConfig::new(dt, 2.0), |_| {}).unwrap();
        prop_assert!(tr.max_step_increase <= 1e-10 * tr.e0());
        prop_assert!(dissipation_residual(&tr) <= 1e-10);
    }
}
