//! Implicit-midpoint time stepping and energy traces.
//!
//! With `A = K - lambda S + beta e_N e_N^T` the semi-discrete system is
//! `y' = v`, `B v' = -A y - v_N e_N`. The midpoint step solves one SPD
//! tridiagonal system for `w = (v_n + v_{n+1})/2` and satisfies
//! `E_{n+1} - E_n = -dt w_N^2` up to linear-solver roundoff.

use crate::assembly::{Mesh, OperatorMatrices};
use crate::error::{Error, Result};
use crate::linalg::{SymTridiag, TridiagCholesky};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct State {
    /// Displacement at the free nodes (node 0 is pinned to zero).
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl State {
    pub fn zeros(dim: usize) -> Self {
        Self { y: vec![0.0; dim], v: vec![0.0; dim], t: 0.0 }
    }
}

/// Initial displacement/velocity presets.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    /// `y0 = x`, `y1 = 0`
    Ramp,
    /// `y0 = 4x(1 - x)`, `y1 = 0`
    Bump,
    /// `y0 = y1 = 0`
    Still,
    /// `y0 = x - c x^2` with `c` chosen so that `eta(1) y0'(1) + beta y0(1) = 0`, `y1 = 0`.
    Compatible { eta_at_1: f64, beta_damp: f64 },
    /// Nodal values at every node including `x = 0`.
    Custom { y: Vec<f64>, v: Vec<f64> },
}

pub fn initial_state(data: &InitialData, mesh: &Mesh) -> Result<State> {
    let dim = mesh.n;
    let zeros = vec![0.0; dim];
    let state = match data {
        InitialData::Ramp => State { y: mesh.interpolate(|x| x), v: zeros, t: 0.0 },
        InitialData::Bump => State { y: mesh.interpolate(|x| 4.0 * x * (1.0 - x)), v: zeros, t: 0.0 },
        InitialData::Still => State::zeros(dim),
        InitialData::Compatible { eta_at_1, beta_damp } => {
            let c = (eta_at_1 + beta_damp) / (2.0 * eta_at_1 + beta_damp);
            State { y: mesh.interpolate(|x| x - c * x * x), v: zeros, t: 0.0 }
        }
        InitialData::Custom { y, v } => {
            if y.len() != dim + 1 || v.len() != dim + 1 {
                return Err(Error::InvalidInitialData(format!(
                    "custom data needs {} nodal values, got {} and {}",
                    dim + 1,
                    y.len(),
                    v.len()
                )));
            }
            if y[0] != 0.0 || v[0] != 0.0 {
                return Err(Error::InvalidInitialData(format!(
                    "y(0) = {}, v(0) = {} must vanish at the degenerate end",
                    y[0], v[0]
                )));
            }
            if y.iter().chain(v).any(|x| !x.is_finite()) {
                return Err(Error::InvalidInitialData("non-finite nodal value".into()));
            }
            State { y: y[1..].to_vec(), v: v[1..].to_vec(), t: 0.0 }
        }
    };
    Ok(state)
}

/// `E = (v^T B v + y^T K y - lambda y^T S y + beta y_N^2) / 2`.
pub fn energy(state: &State, m: &OperatorMatrices, lambda: f64, beta_damp: f64) -> f64 {
    let yn = *state.y.last().unwrap_or(&0.0);
    0.5 * (m.b.quad_form(&state.v) + m.k.quad_form(&state.y) - lambda * m.s.quad_form(&state.y)
        + beta_damp * yn * yn)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImplicitMidpoint,
    /// First-order explicit reference, used only as a negative control.
    #[doc(hidden)]
    ExplicitEuler,
}

/// Result of one step: the new state and the boundary velocity that carries the dissipation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: State,
    /// `(v_n + v_{n+1})_N / 2`
    pub boundary_v_mid: f64,
    pub energy_before: f64,
    pub energy_after: f64,
}

impl StepOutcome {
    /// `|E_{n+1} - E_n + c dt w_N^2|` for damping coefficient `c`.
    pub fn identity_defect(&self, dt: f64, damping: f64) -> f64 {
        (self.energy_after - self.energy_before + damping * dt * self.boundary_v_mid * self.boundary_v_mid).abs()
    }
}

/// Factored one-step map for fixed `dt`, `lambda`, `beta`.
pub struct Stepper<'a> {
    m: &'a OperatorMatrices,
    a: SymTridiag,
    dt: f64,
    lambda: f64,
    beta_damp: f64,
    damping: f64,
    scheme: Scheme,
    chol: TridiagCholesky,
}

impl<'a> Stepper<'a> {
    pub fn new(m: &'a OperatorMatrices, dt: f64, lambda: f64, beta_damp: f64) -> Result<Self> {
        Self::with_options(m, dt, lambda, beta_damp, 1.0, Scheme::ImplicitMidpoint)
    }

    /// `damping = 0` removes the velocity feedback (conservative control run).
    pub fn with_options(
        m: &'a OperatorMatrices,
        dt: f64,
        lambda: f64,
        beta_damp: f64,
        damping: f64,
        scheme: Scheme,
    ) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
        }
        let a = m.coercive_operator(lambda, beta_damp);
        let chol = match scheme {
            Scheme::ImplicitMidpoint => {
                let mut lhs = SymTridiag::combine(&[(2.0, &m.b), (0.5 * dt * dt, &a)]);
                lhs.add_to_last(dt * damping);
                TridiagCholesky::factor(&lhs)
            }
            Scheme::ExplicitEuler => TridiagCholesky::factor(&m.b),
        }
        .map_err(|e| {
            Error::Solver(format!("step matrix factorization failed (dt = {dt:e}, lambda = {lambda:e}): {e}"))
        })?;
        let ratio = chol.pivot_ratio();
        if !ratio.is_finite() || ratio > 1e15 {
            return Err(Error::Solver(format!("step matrix too ill-conditioned (pivot ratio {ratio:e})")));
        }
        Ok(Self { m, a, dt, lambda, beta_damp, damping, scheme, chol })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn energy(&self, s: &State) -> f64 {
        energy(s, self.m, self.lambda, self.beta_damp)
    }

    pub fn step(&self, s: &State) -> StepOutcome {
        let n = s.y.len();
        let nb = n - 1;
        let dt = self.dt;
        let e0 = self.energy(s);
        let ay = self.a.mul_vec(&s.y);
        let state = match self.scheme {
            Scheme::ImplicitMidpoint => {
                let bv = self.m.b.mul_vec(&s.v);
                let mut w: Vec<f64> = bv.iter().zip(&ay).map(|(b, a)| 2.0 * b - dt * a).collect();
                self.chol.solve_in_place(&mut w);
                let y = s.y.iter().zip(&w).map(|(y, w)| y + dt * w).collect();
                let v = s.v.iter().zip(&w).map(|(v, w)| 2.0 * w - v).collect();
                State { y, v, t: s.t + dt }
            }
            Scheme::ExplicitEuler => {
                let mut force: Vec<f64> = ay.iter().map(|a| -a).collect();
                force[nb] -= self.damping * s.v[nb];
                self.chol.solve_in_place(&mut force);
                let y = s.y.iter().zip(&s.v).map(|(y, v)| y + dt * v).collect();
                let v = s.v.iter().zip(&force).map(|(v, f)| v + dt * f).collect();
                State { y, v, t: s.t + dt }
            }
        };
        let boundary_v_mid = 0.5 * (s.v[nb] + state.v[nb]);
        let e1 = self.energy(&state);
        StepOutcome { state, boundary_v_mid, energy_before: e0, energy_after: e1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub dt: f64,
    pub t_final: f64,
    pub stride: usize,
    pub scheme: Scheme,
    /// Coefficient of the velocity feedback `y_t(1)`; 1 for the damped problem.
    pub damping: f64,
    /// Stop once `E < stop_below * E_0` (avoids subnormal arithmetic on long horizons).
    pub stop_below: Option<f64>,
    /// Stop after this many steps even if `t_final` is not reached.
    pub max_steps: Option<usize>,
}

impl SimulationConfig {
    pub fn new(dt: f64, t_final: f64) -> Self {
        Self { dt, t_final, stride: 1, scheme: Scheme::ImplicitMidpoint, damping: 1.0, stop_below: None, max_steps: None }
    }

    /// Number of uniform steps and the adjusted `dt = t_final / steps`.
    pub fn steps(&self) -> Result<(usize, f64)> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("time.dt = {} must be positive", self.dt)));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(Error::InvalidParameter(format!("time.t_final = {} must be >= 0", self.t_final)));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("time.stride must be positive".into()));
        }
        if self.t_final == 0.0 {
            return Ok((0, self.dt));
        }
        let steps = ((self.t_final / self.dt).round() as usize).max(1);
        Ok((steps, self.t_final / steps as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub boundary_y: Vec<f64>,
    pub boundary_v: Vec<f64>,
    /// Identity defect of the step ending at each recorded sample, relative to `max(E_0, 1)` (0 at t = 0).
    pub dissipation_residuals: Vec<f64>,
    pub dt: f64,
    pub stride: usize,
    pub damping: f64,
    /// True if the run stopped at the energy floor or step budget before `t_final`.
    pub terminated_early: bool,
    /// Largest `E_{n+1} - E_n` over every step, recorded or not.
    pub max_step_increase: f64,
    pub t_final: f64,
}

impl EnergyTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn e0(&self) -> f64 {
        self.energy.first().copied().unwrap_or(0.0)
    }

    /// Largest per-step increase `E_{n+1} - E_n` over recorded samples.
    pub fn max_increase(&self) -> f64 {
        self.energy.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Writes `t,E,y1,v1,diss_residual` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,E,y1,v1,diss_residual\n");
        for i in 0..self.len() {
            out += &format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                self.times[i], self.energy[i], self.boundary_y[i], self.boundary_v[i], self.dissipation_residuals[i]
            );
        }
        out
    }
}

/// Per-step record passed to observers during [`simulate_observed`].
pub struct StepView<'s> {
    pub before: &'s State,
    pub after: &'s State,
    pub boundary_v_mid: f64,
    pub energy_before: f64,
    pub energy_after: f64,
}

/// Time integrates from `initial`, calling `observer` after every step.
pub fn simulate_observed<F: FnMut(&StepView<'_>)>(
    m: &OperatorMatrices,
    lambda: f64,
    beta_damp: f64,
    initial: &State,
    cfg: &SimulationConfig,
    mut observer: F,
) -> Result<EnergyTrace> {
    let (steps, dt) = cfg.steps()?;
    if initial.y.len() != m.dim() || initial.v.len() != m.dim() {
        return Err(Error::InvalidInitialData(format!(
            "state has {} unknowns, operator {}",
            initial.y.len(),
            m.dim()
        )));
    }
    let stepper = Stepper::with_options(m, dt, lambda, beta_damp, cfg.damping, cfg.scheme)?;
    let e0 = stepper.energy(initial);
    let scale = e0.max(1.0);
    let nb = m.boundary();
    let mut trace = EnergyTrace {
        times: vec![initial.t],
        energy: vec![e0],
        boundary_y: vec![initial.y[nb]],
        boundary_v: vec![initial.v[nb]],
        dissipation_residuals: vec![0.0],
        dt,
        stride: cfg.stride,
        damping: cfg.damping,
        terminated_early: false,
        max_step_increase: f64::NEG_INFINITY,
        t_final: initial.t + if steps == 0 { 0.0 } else { dt * steps as f64 },
    };
    let mut state = initial.clone();
    let mut worst = 0.0_f64;
    for n in 1..=steps {
        let out = stepper.step(&state);
        let defect = out.identity_defect(dt, cfg.damping) / scale;
        if !out.energy_after.is_finite() {
            return Err(Error::Solver(format!("energy became non-finite at step {n}")));
        }
        worst = worst.max(defect);
        observer(&StepView {
            before: &state,
            after: &out.state,
            boundary_v_mid: out.boundary_v_mid,
            energy_before: out.energy_before,
            energy_after: out.energy_after,
        });
        state = out.state;
        // exact grid time avoids drift from repeated addition
        state.t = initial.t + dt * n as f64;
        trace.max_step_increase = trace.max_step_increase.max(out.energy_after - out.energy_before);
        let floor_hit = cfg.stop_below.is_some_and(|f| out.energy_after < f * e0)
            || cfg.max_steps.is_some_and(|k| n >= k);
        if n % cfg.stride == 0 || n == steps || floor_hit {
            trace.times.push(state.t);
            trace.energy.push(out.energy_after);
            trace.boundary_y.push(state.y[nb]);
            trace.boundary_v.push(state.v[nb]);
            trace.dissipation_residuals.push(worst);
            worst = 0.0;
        }
        if floor_hit && n < steps {
            trace.terminated_early = true;
            break;
        }
    }
    Ok(trace)
}

pub struct Simulation {
    pub trace: EnergyTrace,
    /// Every recorded state, if requested.
    pub states: Vec<State>,
}

/// Time integrates and keeps the recorded states (`stride` apart).
pub fn simulate(
    m: &OperatorMatrices,
    lambda: f64,
    beta_damp: f64,
    initial: &State,
    cfg: &SimulationConfig,
    keep_states: bool,
) -> Result<Simulation> {
    let mut states = Vec::new();
    if keep_states {
        states.push(initial.clone());
    }
    let mut counter = 0usize;
    let mut last = None;
    let (steps, _) = cfg.steps()?;
    let trace = simulate_observed(m, lambda, beta_damp, initial, cfg, |view| {
        counter += 1;
        if keep_states {
            if counter % cfg.stride == 0 || counter == steps {
                states.push(view.after.clone());
                last = None;
            } else {
                last = Some(view.after.clone());
            }
        }
    })?;
    if keep_states {
        // an early stop records the final step even off the stride
        if states.len() < trace.len() {
            states.extend(last);
        }
        states.truncate(trace.len());
        for (s, t) in states.iter_mut().zip(&trace.times) {
            s.t = *t;
        }
    }
    Ok(Simulation { trace, states })
}

/// `max_n |E_{n+1} - E_n + dt w_N^2| / max(E_0, 1)` over the trace.
pub fn dissipation_residual(trace: &EnergyTrace) -> f64 {
    trace.dissipation_residuals.iter().fold(0.0, |m, r| m.max(*r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, build_mesh};
    use crate::coefficients::{feller_weight, CoefficientProfile};

    fn setup(mu: f64, n: usize) -> OperatorMatrices {
        let p = CoefficientProfile::power_law(0.5, mu, 1.0, 0.25, 0.0, 1.0).unwrap();
        let w = feller_weight(&p).unwrap();
        let mesh = build_mesh(n, &p).unwrap();
        assemble(&p, &w, &mesh).unwrap()
    }

    #[test]
    fn presets() {
        let mesh = Mesh::graded(4, 1.0).unwrap();
        let s = initial_state(&InitialData::Ramp, &mesh).unwrap();
        assert_eq!(s.y, vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(s.v, vec![0.0; 4]);
        let s = initial_state(&InitialData::Bump, &mesh).unwrap();
        assert_eq!(*s.y.last().unwrap(), 0.0);
        let bad = InitialData::Custom { y: vec![0.1, 0.0, 0.0, 0.0, 0.0], v: vec![0.0; 5] };
        assert!(matches!(initial_state(&bad, &mesh), Err(Error::InvalidInitialData(_))));
    }

    #[test]
    fn ramp_energy_is_one() {
        let m = setup(0.0, 32);
        let s = initial_state(&InitialData::Ramp, &m.mesh).unwrap();
        assert!((energy(&s, &m, 0.0, 1.0) - 1.0).abs() < 1e-14);
        assert_eq!(energy(&State::zeros(m.dim()), &m, 0.3, 1.0), 0.0);
    }

    #[test]
    fn midpoint_identity_on_three_nodes() {
        // 3 free nodes, explicit matrices, identity checked by direct expansion
        let b = SymTridiag::from_parts(vec![2.0, 3.0, 1.5], vec![0.5, 0.25]);
        let k = SymTridiag::from_parts(vec![4.0, 4.0, 2.0], vec![-2.0, -2.0]);
        let s = SymTridiag::from_parts(vec![1.0, 0.5, 0.2], vec![0.1, 0.05]);
        let m = OperatorMatrices {
            b: b.clone(),
            k: k.clone(),
            k0: k,
            s,
            mesh: Mesh::graded(3, 1.0).unwrap(),
            path: crate::assembly::MomentPath::Exact,
            dirichlet_eliminated: true,
        };
        let st = Stepper::new(&m, 0.1, 0.3, 0.7).unwrap();
        let s0 = State { y: vec![0.3, -0.2, 0.9], v: vec![0.1, 0.4, -0.5], t: 0.0 };
        let out = st.step(&s0);
        let w: Vec<f64> = s0.v.iter().zip(&out.state.v).map(|(a, b)| 0.5 * (a + b)).collect();
        assert!((out.energy_after - out.energy_before + 0.1 * w[2] * w[2]).abs() < 1e-15);
    }

    #[test]
    fn zero_final_time_records_initial_energy() {
        let m = setup(0.1, 16);
        let s = initial_state(&InitialData::Ramp, &m.mesh).unwrap();
        let tr = simulate_observed(&m, 0.0, 1.0, &s, &SimulationConfig::new(1e-3, 0.0), |_| {}).unwrap();
        assert_eq!(tr.len(), 1);
        assert!((tr.energy[0] - energy(&s, &m, 0.0, 1.0)).abs() == 0.0);
    }

    #[test]
    fn tiny_step_changes_little() {
        let m = setup(0.1, 16);
        let s = initial_state(&InitialData::Bump, &m.mesh).unwrap();
        let out = Stepper::new(&m, 1e-12, 0.0, 1.0).unwrap().step(&s);
        let norm: f64 = s.y.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: f64 = s.y.iter().zip(&out.state.y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= 1e-10 * norm);
    }

    #[test]
    fn explicit_reference_breaks_identity() {
        let m = setup(0.1, 32);
        let s = initial_state(&InitialData::Bump, &m.mesh).unwrap();
        let mut cfg = SimulationConfig::new(1e-4, 0.01);
        let mid = simulate_observed(&m, 0.0, 1.0, &s, &cfg, |_| {}).unwrap();
        cfg.scheme = Scheme::ExplicitEuler;
        let euler = simulate_observed(&m, 0.0, 1.0, &s, &cfg, |_| {}).unwrap();
        assert!(dissipation_residual(&mid) < 1e-12);
        assert!(dissipation_residual(&euler) > 1e3 * dissipation_residual(&mid).max(1e-16));
    }

    #[test]
    fn stored_states_match_trace() {
        let m = setup(0.1, 16);
        let s = initial_state(&InitialData::Ramp, &m.mesh).unwrap();
        let mut cfg = SimulationConfig::new(1e-2, 0.1);
        cfg.stride = 3;
        let sim = simulate(&m, 0.0, 1.0, &s, &cfg, true).unwrap();
        assert_eq!(sim.states.len(), sim.trace.len());
        assert_eq!(sim.trace.times.len(), 1 + 3 + 1);
        for (st, e) in sim.states.iter().zip(&sim.trace.energy) {
            assert!((energy(st, &m, 0.0, 1.0) - e).abs() <= 1e-15 * e.max(1.0));
        }
    }
}
