//! Multiplier identities and intermediate energy estimates evaluated on
//! finite-element trajectories.
//!
//! Space integrals are exact per element against the piecewise-linear
//! solution (elementwise-constant `y_x`); time integrals use the trapezoid
//! rule over every step. The boundary flux `eta y_x(1)` is read from the
//! feedback law `eta y_x(1) = -y_t(1) - beta y(1)`, which is how the weak form
//! sees it.

use crate::assembly::{assemble, build_mesh, weighted_mass, ElementIntegrator, OperatorMatrices, DEFAULT_GAUSS_POINTS};
use crate::certificate::DecayCertificate;
use crate::coefficients::{CoefficientProfile, PowerLaw, WeightPair};
use crate::dynamics::{initial_state, simulate_observed, EnergyTrace, InitialData, SimulationConfig, State};
use crate::error::{Error, Result};
use crate::linalg::SymTridiag;
use serde::Serialize;

pub const MULTIPLIER_IDENTITY: &str = "multiplier";
pub const BOUNDARY_TERM_IDENTITY: &str = "boundary-terms";
/// Time window convention for the `lambda y^2(t,1)` boundary integral.
pub const BOUNDARY_WINDOW_NOTE: &str = "all boundary integrals taken over (s, T)";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub identity_name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub refinement_trend: Vec<f64>,
    pub s: f64,
    pub t: f64,
    pub note: &'static str,
}

impl IdentityReport {
    fn new(name: &str, lhs: f64, rhs: f64, s: f64, t: f64) -> Self {
        let residual = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0);
        Self {
            identity_name: name.into(),
            lhs,
            rhs,
            residual,
            refinement_trend: vec![residual],
            s,
            t,
            note: BOUNDARY_WINDOW_NOTE,
        }
    }
}

/// Precomputed weighted operators for the identity integrands (power-law profiles only).
pub struct DiagnosticOperators<'a> {
    m: &'a OperatorMatrices,
    params: PowerLaw,
    k_a: f64,
    lambda: f64,
    beta: f64,
    eta_at_1: f64,
    sigma_at_1: f64,
    d_at_1: f64,
    /// `∫ eta x^(e-alpha) φ_i φ_j`, `e = 1 + beta_b - alpha`
    drift_mass: SymTridiag,
    /// `∫ eta x^(e-alpha-gamma) φ_i φ_j`
    drift_potential: SymTridiag,
    /// per element `∫_e eta x^e`
    drift_stiff: Vec<f64>,
    /// per element `[∫_e (x/sigma) φ_l, ∫_e (x/sigma) φ_r]`
    x_over_sigma: Vec<[f64; 2]>,
}

/// Every spatial quantity needed at one time level.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SampleTerms {
    /// `∫ x y_x y_t / sigma`
    pub x_yx_yt: f64,
    /// `∫ y y_t / sigma`
    pub y_yt: f64,
    /// `∫ y_t^2 / sigma`
    pub kinetic: f64,
    /// `∫ eta x^e y_t^2 / a` (drift correction of the kinetic weight)
    pub kinetic_drift: f64,
    /// `∫ eta y_x^2`
    pub gradient: f64,
    /// `∫ x eta (b/a) y_x^2`
    pub gradient_drift: f64,
    /// `∫ y^2 / (sigma d)`
    pub potential: f64,
    /// `∫ eta x^e y^2 / (a d)`
    pub potential_drift: f64,
    pub y1: f64,
    pub yt1: f64,
    /// `eta(1) y_x(1)`
    pub flux1: f64,
}

impl<'a> DiagnosticOperators<'a> {
    pub fn new(profile: &CoefficientProfile, weights: &'a WeightPair, m: &'a OperatorMatrices, points: usize) -> Result<Self> {
        let params = *profile.power_params().ok_or_else(|| {
            Error::UnsupportedProfile("identity diagnostics need analytic a' and d' (power-law profile)".into())
        })?;
        let integ = ElementIntegrator::new(points)?;
        let eta = |x: f64| weights.eta(x);
        let e = 1.0 + params.beta_b - params.alpha;
        let mesh = &m.mesh;
        let drift_mass = weighted_mass(mesh, &integ, params.alpha - e, Some(&eta))?;
        let drift_potential = weighted_mass(mesh, &integ, params.alpha + params.gamma_d - e, Some(&eta))?;
        let mut drift_stiff = Vec::with_capacity(mesh.n);
        let mut x_over_sigma = Vec::with_capacity(mesh.n);
        for el in 0..mesh.n {
            let (xl, xr) = (mesh.nodes[el], mesh.nodes[el + 1]);
            let [i0, ..] = integ.moments(xl, xr, -e, Some(&eta))?;
            drift_stiff.push(i0);
            let [j0, j1, _] = integ.moments(xl, xr, params.alpha - 1.0, Some(&eta))?;
            x_over_sigma.push([j0 - j1, j1]);
        }
        Ok(Self {
            m,
            params,
            k_a: params.alpha,
            lambda: profile.lambda,
            beta: profile.beta_damp,
            eta_at_1: weights.eta_at_1,
            sigma_at_1: weights.sigma_at_1,
            d_at_1: profile.d.eval(1.0),
            drift_mass,
            drift_potential,
            drift_stiff,
            x_over_sigma,
        })
    }

    pub fn sample(&self, s: &State) -> SampleTerms {
        let m = self.m;
        let nodes = &m.mesh.nodes;
        let nb = m.boundary();
        let at = |v: &[f64], i: usize| if i == 0 { 0.0 } else { v[i - 1] };
        let mut x_yx_yt = 0.0;
        let mut grad_drift = 0.0;
        for el in 0..m.mesh.n {
            let h = nodes[el + 1] - nodes[el];
            let yx = (at(&s.y, el + 1) - at(&s.y, el)) / h;
            let [wl, wr] = self.x_over_sigma[el];
            x_yx_yt += yx * (wl * at(&s.v, el) + wr * at(&s.v, el + 1));
            grad_drift += yx * yx * self.drift_stiff[el];
        }
        let y1 = s.y[nb];
        let yt1 = s.v[nb];
        SampleTerms {
            x_yx_yt,
            y_yt: m.b.bilinear(&s.y, &s.v),
            kinetic: m.b.quad_form(&s.v),
            kinetic_drift: self.drift_mass.quad_form(&s.v),
            gradient: m.k.quad_form(&s.y),
            gradient_drift: self.params.mu * grad_drift,
            potential: m.s.quad_form(&s.y),
            potential_drift: self.drift_potential.quad_form(&s.y),
            y1,
            yt1,
            flux1: -yt1 - self.beta * y1,
        }
    }

    /// Integrand of the distributed terms of the multiplier identity at one time.
    fn multiplier_density(&self, t: &SampleTerms) -> (f64, f64) {
        let (alpha, gamma, mu, lambda) = (self.params.alpha, self.params.gamma_d, self.params.mu, self.lambda);
        let kin = (1.0 - alpha) * t.kinetic + mu * t.kinetic_drift;
        let pot = lambda * ((1.0 - alpha - gamma) * t.potential + mu * t.potential_drift);
        let positive = kin + t.gradient + pot;
        let negative = t.yt1 * t.yt1 / self.sigma_at_1
            + t.flux1 * t.flux1 / self.eta_at_1
            + lambda * t.y1 * t.y1 / (self.sigma_at_1 * self.d_at_1)
            + t.gradient_drift;
        (positive, negative)
    }

    /// Integrands `(boundary part, distributed part)` of the boundary-term identity.
    fn bt_density(&self, t: &SampleTerms) -> (f64, f64) {
        let (alpha, gamma, mu, lambda, ka) = (self.params.alpha, self.params.gamma_d, self.params.mu, self.lambda, self.k_a);
        let boundary = t.yt1 * t.yt1 / self.sigma_at_1 + t.flux1 * t.flux1 / self.eta_at_1
            - 0.5 * ka * t.flux1 * t.y1
            + lambda * t.y1 * t.y1 / (self.sigma_at_1 * self.d_at_1);
        let distributed = (1.0 - alpha + 0.5 * ka) * t.kinetic
            + mu * t.kinetic_drift
            + (1.0 - 0.5 * ka) * t.gradient
            - t.gradient_drift
            + lambda * ((1.0 - alpha - gamma + 0.5 * ka) * t.potential + mu * t.potential_drift);
        (boundary, distributed)
    }
}

/// Streams states (every step, in order) and integrates the identities over `[s, T]`.
pub struct IdentityAccumulator<'o, 'a> {
    ops: &'o DiagnosticOperators<'a>,
    s: f64,
    t: f64,
    tol: f64,
    prev: Option<(f64, SampleTerms)>,
    first: Option<(f64, SampleTerms)>,
    last: Option<(f64, SampleTerms)>,
    mult_pos: f64,
    mult_neg: f64,
    bt_boundary: f64,
    bt_distributed: f64,
}

impl<'o, 'a> IdentityAccumulator<'o, 'a> {
    /// `dt` is the uniform step; samples within `dt/2` of `s` and `T` mark the window ends.
    pub fn new(ops: &'o DiagnosticOperators<'a>, s: f64, t: f64, dt: f64) -> Result<Self> {
        if !(t > s) || !(s >= 0.0) {
            return Err(Error::InvalidParameter(format!("need T > s >= 0, got s = {s}, T = {t}")));
        }
        Ok(Self {
            ops,
            s,
            t,
            tol: 0.5 * dt,
            prev: None,
            first: None,
            last: None,
            mult_pos: 0.0,
            mult_neg: 0.0,
            bt_boundary: 0.0,
            bt_distributed: 0.0,
        })
    }

    pub fn push(&mut self, state: &State) {
        let time = state.t;
        if time < self.s - self.tol || time > self.t + self.tol {
            return;
        }
        let terms = self.ops.sample(state);
        if let Some((tp, prev)) = self.prev {
            let h = time - tp;
            let (p0, n0) = self.ops.multiplier_density(&prev);
            let (p1, n1) = self.ops.multiplier_density(&terms);
            self.mult_pos += 0.5 * h * (p0 + p1);
            self.mult_neg += 0.5 * h * (n0 + n1);
            let (b0, d0) = self.ops.bt_density(&prev);
            let (b1, d1) = self.ops.bt_density(&terms);
            self.bt_boundary += 0.5 * h * (b0 + b1);
            self.bt_distributed += 0.5 * h * (d0 + d1);
        } else {
            self.first = Some((time, terms));
        }
        self.prev = Some((time, terms));
        self.last = Some((time, terms));
    }

    pub fn finish(&self) -> Result<[IdentityReport; 2]> {
        let (Some((ts, a)), Some((te, b))) = (self.first, self.last) else {
            return Err(Error::InsufficientHorizon { required: self.t, available: 0.0 });
        };
        if te < self.t - self.tol || ts > self.s + self.tol {
            return Err(Error::InsufficientHorizon { required: self.t, available: te });
        }
        let ka = self.ops.k_a;
        // 0 = 2[x y_x y_t/sigma] - boundary terms - drift gradient + distributed terms
        let time_bdry = 2.0 * (b.x_yx_yt - a.x_yx_yt);
        let lhs = time_bdry + self.mult_pos;
        let rhs = self.mult_neg;
        let mult = IdentityReport::new(MULTIPLIER_IDENTITY, lhs, rhs, ts, te);
        let bt_time = -2.0 * (b.x_yx_yt - a.x_yx_yt) + 0.5 * ka * (b.y_yt - a.y_yt);
        let bt = IdentityReport::new(BOUNDARY_TERM_IDENTITY, bt_time + self.bt_boundary, self.bt_distributed, ts, te);
        Ok([mult, bt])
    }
}

fn check_dense(states: &[State]) -> Result<f64> {
    if states.len() < 2 {
        return Err(Error::InsufficientHorizon { required: 0.0, available: 0.0 });
    }
    let dt = states[1].t - states[0].t;
    let uniform = states.windows(2).all(|w| ((w[1].t - w[0].t) - dt).abs() <= 1e-9 * dt.max(1.0));
    if !(dt > 0.0) || !uniform {
        return Err(Error::InvalidParameter("identity diagnostics need every step recorded (stride 1)".into()));
    }
    Ok(dt)
}

fn run_identities(
    states: &[State],
    profile: &CoefficientProfile,
    weights: &WeightPair,
    m: &OperatorMatrices,
    s: f64,
    t: f64,
) -> Result<[IdentityReport; 2]> {
    let dt = check_dense(states)?;
    let ops = DiagnosticOperators::new(profile, weights, m, DEFAULT_GAUSS_POINTS)?;
    let mut acc = IdentityAccumulator::new(&ops, s, t, dt)?;
    for st in states {
        acc.push(st);
    }
    acc.finish()
}

/// Multiplier identity (pairing with `x y_x / sigma`) over `[s, T]`.
pub fn multiplier_residual(
    states: &[State],
    profile: &CoefficientProfile,
    weights: &WeightPair,
    m: &OperatorMatrices,
    s: f64,
    t: f64,
) -> Result<IdentityReport> {
    let [mult, _] = run_identities(states, profile, weights, m, s, t)?;
    Ok(mult)
}

/// Boundary-term identity (multipliers `x y_x / sigma` and `y / sigma`) over `[s, T]`.
pub fn bt_identity_residual(
    states: &[State],
    profile: &CoefficientProfile,
    weights: &WeightPair,
    m: &OperatorMatrices,
    s: f64,
    t: f64,
) -> Result<IdentityReport> {
    let [_, bt] = run_identities(states, profile, weights, m, s, t)?;
    Ok(bt)
}

/// Simulates on `[0, T]` and integrates both identities over `[s, T]` without storing the trajectory.
pub fn stream_identities(
    profile: &CoefficientProfile,
    weights: &WeightPair,
    m: &OperatorMatrices,
    initial: &State,
    dt: f64,
    s: f64,
    t: f64,
) -> Result<[IdentityReport; 2]> {
    let ops = DiagnosticOperators::new(profile, weights, m, DEFAULT_GAUSS_POINTS)?;
    let mut acc = IdentityAccumulator::new(&ops, s, t, dt)?;
    acc.push(initial);
    let cfg = SimulationConfig::new(dt, t);
    simulate_observed(m, profile.lambda, profile.beta_damp, initial, &cfg, |view| acc.push(view.after))?;
    acc.finish()
}

/// Both identities on each `(N, dt)` level; the reports of the finest level
/// carry the whole residual sequence in `refinement_trend`.
pub fn identity_refinement(
    profile: &CoefficientProfile,
    weights: &WeightPair,
    levels: &[(usize, f64)],
    data: &InitialData,
    s: f64,
    t: f64,
) -> Result<[IdentityReport; 2]> {
    let mut out: Option<[IdentityReport; 2]> = None;
    let mut trends = [Vec::new(), Vec::new()];
    for &(n, dt) in levels {
        let mesh = build_mesh(n, profile)?;
        let m = assemble(profile, weights, &mesh)?;
        let initial = initial_state(data, &mesh)?;
        let reports = stream_identities(profile, weights, &m, &initial, dt, s, t)?;
        for (trend, r) in trends.iter_mut().zip(&reports) {
            trend.push(r.residual);
        }
        out = Some(reports);
    }
    let mut out = out.ok_or_else(|| Error::InvalidParameter("no refinement levels given".into()))?;
    for (r, trend) in out.iter_mut().zip(trends) {
        r.refinement_trend = trend;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        let slack = rhs - lhs;
        // rounding allowance relative to the size of the terms
        Self { lhs, rhs, slack, holds: slack >= -1e-12 * lhs.abs().max(rhs.abs()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceBoundReport {
    /// `∫ y^2(t,1) <= C3 E(s) + delta C4 ∫ E`
    pub boundary_trace: BoundCheck,
    /// `(eps0/2) ∫∫ (y_t^2/sigma + eta y_x^2 - lambda y^2/(sigma d)) <= C1 E(s) + ...`
    pub distributed_energy: BoundCheck,
    pub s: f64,
    pub t: f64,
    pub e_s: f64,
    pub int_energy: f64,
    pub int_boundary_sq: f64,
}

impl TraceBoundReport {
    pub fn all_hold(&self) -> bool {
        self.boundary_trace.holds && self.distributed_energy.holds
    }
}

/// Both intermediate inequalities on a stride-1 trace. `rhs_scale` multiplies
/// every right-hand-side constant (1 for the real check).
pub fn trace_bound_check(trace: &EnergyTrace, cert: &DecayCertificate, s: f64, t: f64, rhs_scale: f64) -> Result<TraceBoundReport> {
    if trace.stride != 1 {
        return Err(Error::InvalidParameter("bound checks need every step recorded (stride 1)".into()));
    }
    if !(t > s) || !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!("need T > s >= 0, got s = {s}, T = {t}")));
    }
    let tol = 0.5 * trace.dt;
    let last = *trace.times.last().unwrap_or(&0.0);
    if last < t - tol {
        return Err(Error::InsufficientHorizon { required: t, available: last });
    }
    let idx: Vec<usize> = (0..trace.len())
        .filter(|&i| trace.times[i] >= s - tol && trace.times[i] <= t + tol)
        .collect();
    if idx.len() < 2 {
        return Err(Error::InsufficientHorizon { required: t, available: last });
    }
    let inputs = &cert.inputs;
    let beta = inputs.beta;
    let (mut int_e, mut int_y2, mut int_dist) = (0.0, 0.0, 0.0);
    for w in idx.windows(2) {
        let (i, j) = (w[0], w[1]);
        let h = trace.times[j] - trace.times[i];
        let (yi, yj) = (trace.boundary_y[i], trace.boundary_y[j]);
        int_e += 0.5 * h * (trace.energy[i] + trace.energy[j]);
        int_y2 += 0.5 * h * (yi * yi + yj * yj);
        int_dist += 0.5 * h * (2.0 * trace.energy[i] - beta * yi * yi + 2.0 * trace.energy[j] - beta * yj * yj);
    }
    let e_s = trace.energy[idx[0]];
    let boundary_trace = BoundCheck::new(int_y2, rhs_scale * (cert.c3 * e_s + cert.delta * cert.c4 * int_e));
    let eps0 = cert.epsilon0;
    let coeff = cert.c2 - beta * eps0 / 2.0;
    let mut rhs = cert.c1 * e_s + coeff * int_y2;
    if inputs.lambda < 0.0 {
        rhs -= inputs.lambda_shift() * int_e;
    }
    let distributed_energy = BoundCheck::new(0.5 * eps0 * int_dist, rhs_scale * rhs);
    Ok(TraceBoundReport {
        boundary_trace,
        distributed_energy,
        s: trace.times[idx[0]],
        t: trace.times[*idx.last().unwrap()],
        e_s,
        int_energy: int_e,
        int_boundary_sq: int_y2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, build_mesh};
    use crate::coefficients::feller_weight;

    #[test]
    fn zero_solution_has_zero_residual() {
        let p = CoefficientProfile::power_law(0.5, 0.1, 1.0, 0.25, 0.05, 1.0).unwrap();
        let w = feller_weight(&p).unwrap();
        let mesh = build_mesh(16, &p).unwrap();
        let m = assemble(&p, &w, &mesh).unwrap();
        let states: Vec<State> = (0..11).map(|i| State { t: 0.1 * i as f64, ..State::zeros(16) }).collect();
        let r = multiplier_residual(&states, &p, &w, &m, 0.2, 0.8).unwrap();
        assert_eq!((r.lhs, r.rhs, r.residual), (0.0, 0.0, 0.0));
        let r = bt_identity_residual(&states, &p, &w, &m, 0.2, 0.8).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn x_over_sigma_moments_match_direct_integral() {
        let p = CoefficientProfile::power_law(1.5, 0.02, 1.0, 0.2, 0.0, 1.0).unwrap();
        let w = feller_weight(&p).unwrap();
        let mesh = build_mesh(32, &p).unwrap();
        let m = assemble(&p, &w, &mesh).unwrap();
        let ops = DiagnosticOperators::new(&p, &w, &m, 4).unwrap();
        // y = x, v = x: ∫ x * 1 * x / sigma = ∫ eta x^(2 - alpha)
        let s = State { y: mesh.interpolate(|x| x), v: mesh.interpolate(|x| x), t: 0.0 };
        let got = ops.sample(&s).x_yx_yt;
        let oracle = crate::quadrature::integrate_adaptive(|x: f64| w.eta(x) * x.powf(0.5), 0.0, 1.0, 1e-14).unwrap();
        assert!((got - oracle).abs() < 1e-8 * oracle);
    }

    #[test]
    fn tabulated_profiles_are_refused() {
        use crate::coefficients::Coefficient;
        let p = CoefficientProfile::tabulated(
            Coefficient::sampled(|x| x),
            Coefficient::sampled(|_| 0.0),
            Coefficient::sampled(|x| x.sqrt()),
            0.0,
            1.0,
        )
        .unwrap();
        let w = feller_weight(&p).unwrap();
        let mesh = crate::assembly::Mesh::graded(16, 2.0).unwrap();
        let m = assemble(&p, &w, &mesh).unwrap();
        assert!(matches!(DiagnosticOperators::new(&p, &w, &m, 4), Err(Error::UnsupportedProfile(_))));
    }
}
