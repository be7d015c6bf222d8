//! Best Hardy-Poincaré constants, the lambda gauge and the steady boundary problem.

use crate::assembly::{assemble_with, AssemblyOptions, Mesh, OperatorMatrices};
use crate::coefficients::{CoefficientProfile, WeightPair};
use crate::error::{Error, Result};
use crate::linalg::{SymTridiag, TridiagCholesky};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const RAYLEIGH_TOL: f64 = 1e-10;
pub const MAX_INVERSE_ITERATIONS: usize = 500;
/// Two finest levels agreeing to this relative tolerance count as converged.
pub const EXTRAPOLATION_TOL: f64 = 1e-4;
pub const DEFAULT_LEVELS: usize = 3;
/// Safety factor on the last refinement increment.
const SAFETY_FACTOR: f64 = 3.0;
/// Roundoff allowance on the steady-state estimates (attained with equality in exact arithmetic).
const STEADY_ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
}

/// Smallest eigenpairs of `A x = nu M x` by shift-zero inverse iteration,
/// deflating previously found pairs in the `M` inner product.
pub fn smallest_eigenpairs(a: &SymTridiag, m: &SymTridiag, count: usize, start: &[f64]) -> Result<Vec<Eigenpair>> {
    let n = a.len();
    if m.len() != n || start.len() != n {
        return Err(Error::Spectral("pencil dimension mismatch".into()));
    }
    if count > n {
        return Err(Error::Spectral(format!("asked for {count} eigenpairs of a {n}-dimensional pencil")));
    }
    let chol = TridiagCholesky::factor(a).map_err(|e| Error::Spectral(format!("stiffness not definite: {e}")))?;
    TridiagCholesky::factor(m).map_err(|e| Error::Spectral(format!("mass not definite: {e}")))?;
    let mut pairs: Vec<Eigenpair> = Vec::with_capacity(count);
    for k in 0..count {
        let mut x = start.to_vec();
        // perturb so later pairs do not start in the span of earlier ones
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += 1e-3 * (((i + 1) * (k + 1)) as f64).sin();
        }
        let mut prev = f64::INFINITY;
        let mut last_change = f64::INFINITY;
        let mut found = None;
        for it in 1..=MAX_INVERSE_ITERATIONS {
            deflate(&mut x, &pairs, m);
            let norm = m.quad_form(&x).sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Spectral(format!("iterate collapsed at step {it}")));
            }
            x.iter_mut().for_each(|v| *v /= norm);
            let rq = a.quad_form(&x);
            last_change = ((rq - prev) / rq).abs();
            if last_change <= RAYLEIGH_TOL {
                found = Some(Eigenpair { value: rq, vector: x.clone(), iterations: it });
                break;
            }
            prev = rq;
            let mut y = m.mul_vec(&x);
            chol.solve_in_place(&mut y);
            x = y;
        }
        match found {
            Some(p) => pairs.push(p),
            None => {
                return Err(Error::Convergence { iterations: MAX_INVERSE_ITERATIONS, last_change });
            }
        }
    }
    Ok(pairs)
}

fn deflate(x: &mut [f64], pairs: &[Eigenpair], m: &SymTridiag) {
    for p in pairs {
        let c = m.bilinear(&p.vector, x);
        for (xi, vi) in x.iter_mut().zip(&p.vector) {
            *xi -= c * vi;
        }
    }
}

/// Smallest eigenvalue of the pencil `(a, m)`.
pub fn smallest_eigenvalue(a: &SymTridiag, m: &SymTridiag, start: &[f64]) -> Result<Eigenpair> {
    Ok(smallest_eigenpairs(a, m, 1, start)?.remove(0))
}

/// `(C_HP, C~_HP)` on one mesh.
pub fn discrete_constants(m: &OperatorMatrices) -> Result<(f64, f64)> {
    let start = m.mesh.free_nodes().to_vec();
    let nu = smallest_eigenvalue(&m.k, &m.s, &start)?.value;
    let mu = smallest_eigenvalue(&m.k0, &m.b, &start)?.value;
    if !(nu > 0.0) || !(mu > 0.0) {
        return Err(Error::Spectral(format!("non-positive pencil minimum ({nu}, {mu})")));
    }
    Ok((1.0 / nu, 1.0 / mu))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardyLevel {
    pub n: usize,
    pub c_hp: f64,
    pub c_hp_tilde: f64,
}

/// Refinement sequence of one constant, its extrapolant and a safe upper value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinedValue {
    pub finest: f64,
    pub extrapolant: f64,
    /// Observed convergence order in the element count, if the increments contract.
    pub order: Option<f64>,
    pub last_increment: f64,
    pub safe: f64,
}

impl RefinedValue {
    pub fn from_sequence(values: &[f64]) -> Self {
        let finest = *values.last().expect("at least one level");
        let k = values.len();
        let last_increment = if k >= 2 { finest - values[k - 2] } else { 0.0 };
        let (extrapolant, order) = if k >= 3 {
            let d1 = values[k - 2] - values[k - 3];
            let d2 = last_increment;
            let rho = d2 / d1;
            if d1 != 0.0 && rho > 0.0 && rho < 1.0 {
                (finest + d2 * rho / (1.0 - rho), Some(-rho.log2()))
            } else {
                (finest, None)
            }
        } else {
            (finest, None)
        };
        let safe = (finest + SAFETY_FACTOR * last_increment.abs()).max(extrapolant);
        Self { finest, extrapolant, order, last_increment, safe }
    }

    pub fn converged(&self) -> bool {
        self.last_increment.abs() <= EXTRAPOLATION_TOL * self.finest.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardyConstants {
    pub c_hp: f64,
    pub c_hp_tilde: f64,
    pub mesh_size: usize,
    pub extrapolated: bool,
    pub levels: Vec<HardyLevel>,
    pub c_hp_refined: Option<RefinedValue>,
    pub c_hp_tilde_refined: Option<RefinedValue>,
    /// True once the safety inflation has been applied.
    pub inflated: bool,
}

impl HardyConstants {
    /// Constants given directly (no refinement history).
    pub fn from_values(c_hp: f64, c_hp_tilde: f64) -> Self {
        Self {
            c_hp,
            c_hp_tilde,
            mesh_size: 0,
            extrapolated: false,
            levels: vec![],
            c_hp_refined: None,
            c_hp_tilde_refined: None,
            inflated: false,
        }
    }

    /// Copy carrying the safety-inflated constants used for certification.
    pub fn certified(&self) -> Self {
        let mut out = self.clone();
        if let Some(r) = &self.c_hp_refined {
            out.c_hp = r.safe;
        }
        if let Some(r) = &self.c_hp_tilde_refined {
            out.c_hp_tilde = r.safe;
        }
        out.inflated = true;
        out
    }
}

/// Hardy constants from one assembled mesh (no refinement history).
pub fn best_constants_on(m: &OperatorMatrices) -> Result<HardyConstants> {
    let (c, ct) = discrete_constants(m)?;
    let mut h = HardyConstants::from_values(c, ct);
    h.mesh_size = m.mesh.n;
    h.levels = vec![HardyLevel { n: m.mesh.n, c_hp: c, c_hp_tilde: ct }];
    Ok(h)
}

/// Hardy constants on `n / 2^(levels-1), ..., n/2, n` elements of the same grading.
pub fn best_constants(
    profile: &CoefficientProfile,
    weights: &WeightPair,
    finest: &Mesh,
    opts: AssemblyOptions,
    levels: usize,
) -> Result<HardyConstants> {
    if levels == 0 {
        return Err(Error::InvalidParameter("hardy.levels must be at least 1".into()));
    }
    let mut sizes = Vec::new();
    let mut n = finest.n;
    for _ in 0..levels {
        sizes.push(n);
        if n % 2 != 0 || n / 2 < 2 {
            break;
        }
        n /= 2;
    }
    sizes.reverse();
    let mut hist = Vec::with_capacity(sizes.len());
    for n in sizes {
        let mesh = Mesh::graded(n, finest.q)?;
        let m = assemble_with(profile, weights, &mesh, opts)?;
        let (c, ct) = discrete_constants(&m)?;
        hist.push(HardyLevel { n, c_hp: c, c_hp_tilde: ct });
    }
    let rc = RefinedValue::from_sequence(&hist.iter().map(|l| l.c_hp).collect::<Vec<_>>());
    let rt = RefinedValue::from_sequence(&hist.iter().map(|l| l.c_hp_tilde).collect::<Vec<_>>());
    Ok(HardyConstants {
        c_hp: rc.finest,
        c_hp_tilde: rt.finest,
        mesh_size: finest.n,
        extrapolated: hist.len() >= 2 && rc.converged() && rt.converged(),
        levels: hist,
        c_hp_refined: Some(rc),
        c_hp_tilde_refined: Some(rt),
        inflated: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HardySampleCheck {
    pub samples: usize,
    pub violations: usize,
    /// Smallest `(u'Ku - u'Su / C) / u'Ku` seen.
    pub worst_relative: f64,
}

/// Tests `u'Ku - u'Su / c_hp >= -tol u'Ku` on `samples` seeded random nodal vectors,
/// cycling through rough (independent uniform entries), smooth (random sine sums) and
/// power-like (`x^p (1 + c x)`) samples.
pub fn random_hardy_check(m: &OperatorMatrices, c_hp: f64, samples: usize, seed: u64, tol: f64) -> HardySampleCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = m.mesh.free_nodes();
    let mut u = vec![0.0; m.dim()];
    let mut out = HardySampleCheck { samples, violations: 0, worst_relative: f64::INFINITY };
    for k in 0..samples {
        match k % 3 {
            0 => u.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0)),
            1 => {
                let modes: Vec<(f64, f64)> = (1..=6)
                    .map(|j| (rng.gen_range(-1.0..1.0) / j as f64, (j as f64 - 0.5) * std::f64::consts::PI))
                    .collect();
                for (v, xi) in u.iter_mut().zip(x) {
                    *v = modes.iter().map(|(c, w)| c * (w * xi).sin()).sum();
                }
            }
            _ => {
                let p = rng.gen_range(0.1..1.5);
                let c = rng.gen_range(-0.5..0.5);
                for (v, xi) in u.iter_mut().zip(x) {
                    *v = xi.powf(p) * (1.0 + c * xi);
                }
            }
        }
        let ku = m.k.quad_form(&u);
        let su = m.s.quad_form(&u);
        if ku <= 0.0 {
            continue;
        }
        let rel = (ku - su / c_hp) / ku;
        out.worst_relative = out.worst_relative.min(rel);
        if rel < -tol {
            out.violations += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaGauge {
    pub epsilon: Option<f64>,
    pub one_eps: f64,
    pub c_lambda: f64,
}

pub fn lambda_gauge(lambda: f64, hardy: &HardyConstants, eta_min: f64) -> Result<LambdaGauge> {
    if !(eta_min > 0.0) {
        return Err(Error::InvalidParameter(format!("min eta = {eta_min} must be positive")));
    }
    if !lambda.is_finite() {
        return Err(Error::InadmissibleLambda(format!("lambda = {lambda}")));
    }
    if lambda <= 0.0 {
        return Ok(LambdaGauge { epsilon: None, one_eps: 1.0, c_lambda: 1.0 / eta_min.sqrt() });
    }
    let eps = 1.0 - lambda * hardy.c_hp;
    if !(eps > 0.0) {
        return Err(Error::InadmissibleLambda(format!(
            "lambda < 1/C_HP violated: lambda = {lambda:.6e}, 1/C_HP = {:.6e}",
            1.0 / hardy.c_hp
        )));
    }
    Ok(LambdaGauge { epsilon: Some(eps), one_eps: eps, c_lambda: 1.0 / (eps * eta_min).sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyState {
    pub z: Vec<f64>,
    pub gamma: f64,
    pub triple_norm_sq: f64,
    pub weighted_l2_sq: f64,
    /// `||(K - lambda S + beta e e^T) Z - gamma e_N||_inf`
    pub residual: f64,
}

/// Solves `(K - lambda S + beta e_N e_N^T) Z = gamma e_N`.
pub fn solve_steady(m: &OperatorMatrices, gamma: f64, lambda: f64, beta_damp: f64) -> Result<SteadyState> {
    let a = m.coercive_operator(lambda, beta_damp);
    let chol = TridiagCholesky::factor(&a).map_err(|e| {
        Error::Solver(format!("steady operator not coercive at lambda = {lambda:.6e}: {e}"))
    })?;
    let nb = m.boundary();
    let mut rhs = vec![0.0; m.dim()];
    rhs[nb] = gamma;
    let z = chol.solve(&rhs);
    let az = a.mul_vec(&z);
    let residual = az
        .iter()
        .zip(&rhs)
        .fold(0.0_f64, |acc, (x, r)| acc.max((x - r).abs()));
    let triple_norm_sq = m.k.quad_form(&z) - lambda * m.s.quad_form(&z) + beta_damp * z[nb] * z[nb];
    let weighted_l2_sq = m.b.quad_form(&z);
    Ok(SteadyState { z, gamma, triple_norm_sq, weighted_l2_sq, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyEstimates {
    pub triple_bound: f64,
    pub l2_bound: f64,
    pub triple_ok: bool,
    pub l2_ok: bool,
}

/// `|||Z|||^2 <= gamma^2 C_lambda^2` and `||Z||^2 <= (C~_HP + max eta) gamma^2 C_lambda^4`.
pub fn steady_estimates(state: &SteadyState, gauge: &LambdaGauge, hardy: &HardyConstants, eta_max: f64) -> SteadyEstimates {
    let g2 = state.gamma * state.gamma;
    let cl2 = gauge.c_lambda * gauge.c_lambda;
    let triple_bound = g2 * cl2;
    let l2_bound = (hardy.c_hp_tilde + eta_max) * g2 * cl2 * cl2;
    SteadyEstimates {
        triple_bound,
        l2_bound,
        triple_ok: state.triple_norm_sq <= triple_bound * (1.0 + STEADY_ROUNDOFF),
        l2_ok: state.weighted_l2_sq <= l2_bound * (1.0 + STEADY_ROUNDOFF),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, build_mesh};
    use crate::coefficients::feller_weight;

    fn operators(alpha: f64, mu: f64, gamma: f64, n: usize) -> (CoefficientProfile, WeightPair, OperatorMatrices) {
        let p = CoefficientProfile::power_law(alpha, mu, 1.0, gamma, 0.0, 1.0).unwrap();
        let w = feller_weight(&p).unwrap();
        let mesh = build_mesh(n, &p).unwrap();
        let m = assemble(&p, &w, &mesh).unwrap();
        (p, w, m)
    }

    #[test]
    fn inverse_iteration_matches_inertia_count() {
        let (_, _, m) = operators(0.5, 0.1, 0.25, 64);
        let pairs = smallest_eigenpairs(&m.k, &m.s, 3, m.mesh.free_nodes()).unwrap();
        for (k, p) in pairs.iter().enumerate() {
            assert_eq!(m.k.count_below(&m.s, p.value * (1.0 - 1e-8)), k);
            assert_eq!(m.k.count_below(&m.s, p.value * (1.0 + 1e-8)), k + 1);
        }
    }

    #[test]
    fn gauge_branches() {
        let h = HardyConstants::from_values(2.0, 1.0);
        let g = lambda_gauge(-0.3, &h, 1.0).unwrap();
        assert_eq!((g.epsilon, g.one_eps, g.c_lambda), (None, 1.0, 1.0));
        let g = lambda_gauge(0.25, &h, 0.8).unwrap();
        assert_eq!(g.epsilon, Some(0.5));
        assert!((g.c_lambda - 1.0 / (0.5f64 * 0.8).sqrt()).abs() < 1e-15);
        assert!(matches!(lambda_gauge(0.5, &h, 1.0), Err(Error::InadmissibleLambda(_))));
    }

    #[test]
    fn refined_value_aitken() {
        // geometric sequence converging to 1 with ratio 1/4
        let v = [1.0 - 1.0, 1.0 - 0.25, 1.0 - 0.0625];
        let r = RefinedValue::from_sequence(&v);
        assert!((r.extrapolant - 1.0).abs() < 1e-15);
        assert!((r.order.unwrap() - 2.0).abs() < 1e-12);
        assert!(r.safe >= r.extrapolant);
    }

    #[test]
    fn steady_state_equality_case() {
        let (_, _, m) = operators(0.5, 0.0, 0.25, 32);
        let st = solve_steady(&m, 1.0, 0.0, 0.0).unwrap();
        for (z, x) in st.z.iter().zip(m.mesh.free_nodes()) {
            assert!((z - x).abs() < 1e-12);
        }
        assert!((st.triple_norm_sq - 1.0).abs() < 1e-12);
        let st = solve_steady(&m, 1.0, 0.0, 3.0).unwrap();
        for (z, x) in st.z.iter().zip(m.mesh.free_nodes()) {
            assert!((z - x / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn best_constants_increase_under_refinement() {
        let (p, w, m) = operators(0.5, 0.1, 0.25, 128);
        let h = best_constants(&p, &w, &m.mesh, AssemblyOptions::default(), 3).unwrap();
        assert_eq!(h.levels.iter().map(|l| l.n).collect::<Vec<_>>(), vec![32, 64, 128]);
        assert!(h.levels.windows(2).all(|l| l[1].c_hp >= l[0].c_hp * (1.0 - 1e-12)));
        let c = h.certified();
        assert!(c.c_hp >= h.c_hp && c.inflated);
    }
}
