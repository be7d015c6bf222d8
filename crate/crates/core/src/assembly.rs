//! Graded meshes and the weighted piecewise-linear element matrices.
//!
//! Weights have the form `g(x) x^-p` with `g` smooth. The singular factor is
//! integrated exactly against the local polynomial, and only `g` is sampled at
//! Gauss points and interpolated. Node 0 (the degenerate end) is eliminated,
//! so reduced index `i` is node `i + 1` and the last index is the `x = 1` node.

use crate::coefficients::{degeneracy_exponent, CoefficientProfile, WeightPair};
use crate::error::{Error, Result};
use crate::linalg::SymTridiag;
use crate::quadrature::GaussRule;
use serde::Serialize;

pub const MIN_ELEMENTS: usize = 8;
pub const DEFAULT_GAUSS_POINTS: usize = 4;
const FAR_FIELD_POINTS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mesh {
    pub n: usize,
    pub q: f64,
    pub nodes: Vec<f64>,
}

impl Mesh {
    /// Nodes `x_i = (i/n)^q`, `i = 0..=n`.
    pub fn graded(n: usize, q: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("mesh needs at least 2 elements, got {n}")));
        }
        if !(q >= 1.0) || !q.is_finite() {
            return Err(Error::InvalidParameter(format!("mesh grading q = {q} must be >= 1")));
        }
        let nodes = (0..=n)
            .map(|i| {
                let s = i as f64 / n as f64;
                if q == 1.0 {
                    s
                } else {
                    s.powf(q)
                }
            })
            .collect();
        Ok(Self { n, q, nodes })
    }

    pub fn h(&self, e: usize) -> f64 {
        self.nodes[e + 1] - self.nodes[e]
    }

    /// Nodes without the eliminated `x = 0`.
    pub fn free_nodes(&self) -> &[f64] {
        &self.nodes[1..]
    }

    /// Nodal interpolant on the free nodes.
    pub fn interpolate<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.free_nodes().iter().map(|x| f(*x)).collect()
    }

    /// The mesh with every element bisected in the reference coordinate (`n -> 2n`).
    pub fn refined(&self) -> Result<Self> {
        Self::graded(2 * self.n, self.q)
    }
}

/// Grading `q = max(1, 2/(2 - K_a))` clamped to `[1, 4]`.
pub fn grading_for(k_a: f64) -> f64 {
    if k_a >= 2.0 {
        return 4.0;
    }
    (2.0 / (2.0 - k_a)).clamp(1.0, 4.0)
}

pub fn build_mesh(n: usize, profile: &CoefficientProfile) -> Result<Mesh> {
    if n < MIN_ELEMENTS {
        return Err(Error::InvalidParameter(format!(
            "mesh.n = {n} is below the minimum of {MIN_ELEMENTS}"
        )));
    }
    let k_a = degeneracy_exponent(&profile.a)?.value;
    Mesh::graded(n, grading_for(k_a))
}

/// `∫_{x_l}^{x_r} x^(k - p) dx`.
pub fn singular_moment(x_l: f64, x_r: f64, p: f64, k: u32) -> Result<f64> {
    if !(x_l >= 0.0 && x_r > x_l) {
        return Err(Error::InvalidParameter(format!("bad moment interval [{x_l}, {x_r}]")));
    }
    let e = k as f64 - p + 1.0;
    if x_l == 0.0 {
        if e <= 0.0 {
            return Err(Error::Integrability(format!(
                "∫_0 x^({k} - {p}) dx diverges at 0"
            )));
        }
        return Ok(x_r.powf(e) / e);
    }
    // ln(x_r / x_l) without forming the ratio of nearby numbers
    let log_ratio = ((x_r - x_l) / x_l).ln_1p();
    if e == 0.0 {
        Ok(log_ratio)
    } else {
        Ok(x_l.powf(e) * (e * log_ratio).exp_m1() / e)
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `L_j = ∫_e t^j x^-p dx` for `j = 0..count`, with `t` the local coordinate.
/// On the first element moments with `j - p + 1 <= 0` diverge and come back as NaN.
fn local_moments(x_l: f64, x_r: f64, p: f64, count: usize, far: &GaussRule) -> Result<Vec<f64>> {
    let h = x_r - x_l;
    let mut out = vec![0.0; count];
    if x_l == 0.0 {
        for (j, slot) in out.iter_mut().enumerate() {
            let e = j as f64 - p + 1.0;
            *slot = if e > 0.0 { h.powf(1.0 - p) / e } else { f64::NAN };
        }
    } else if x_l < 2.0 * h {
        let mut raw = Vec::with_capacity(count);
        for i in 0..count {
            raw.push(singular_moment(x_l, x_r, p, i as u32)?);
        }
        for (j, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, r) in raw.iter().enumerate().take(j + 1) {
                acc += binomial(j as u32, i as u32) * (-x_l).powi((j - i) as i32) * r;
            }
            *slot = acc / h.powi(j as i32);
        }
    } else {
        for (t, w) in far.nodes.iter().zip(&far.weights) {
            let base = w * h * (x_l + h * t).powf(-p);
            let mut tp = 1.0;
            for slot in out.iter_mut() {
                *slot += base * tp;
                tp *= t;
            }
        }
    }
    Ok(out)
}

/// Monomial coefficients (in `t`) of the Lagrange basis on `nodes`.
fn lagrange_monomials(nodes: &[f64]) -> Vec<Vec<f64>> {
    let n = nodes.len();
    (0..n)
        .map(|j| {
            let mut poly = vec![1.0];
            for (i, xi) in nodes.iter().enumerate() {
                if i == j {
                    continue;
                }
                let scale = 1.0 / (nodes[j] - xi);
                let mut next = vec![0.0; poly.len() + 1];
                for (k, c) in poly.iter().enumerate() {
                    next[k + 1] += c * scale;
                    next[k] -= c * xi * scale;
                }
                poly = next;
            }
            poly
        })
        .collect()
}

/// How the smooth factor of each weight is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentPath {
    /// Exact moments when the smooth factor is constant, Gauss otherwise.
    Auto,
    /// Smooth factor interpolated at Gauss points.
    Gauss,
    /// Smooth factor must be identically one.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssemblyOptions {
    pub gauss_points: usize,
    pub path: MomentPath,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self { gauss_points: DEFAULT_GAUSS_POINTS, path: MomentPath::Auto }
    }
}

/// Integrates products of the two local hat functions against `g(x) x^-p`.
pub struct ElementIntegrator {
    rule: GaussRule,
    far: GaussRule,
    basis: Vec<Vec<f64>>,
}

impl ElementIntegrator {
    pub fn new(points: usize) -> Result<Self> {
        if !(1..=12).contains(&points) {
            return Err(Error::InvalidParameter(format!(
                "quadrature.points = {points} must be in 1..=12"
            )));
        }
        let rule = GaussRule::new(points);
        let basis = lagrange_monomials(&rule.nodes);
        Ok(Self { rule, far: GaussRule::new(FAR_FIELD_POINTS), basis })
    }

    pub fn rule(&self) -> &GaussRule {
        &self.rule
    }

    /// `[∫w, ∫w t, ∫w t^2]` over the element, `w = g x^-p`; `g = None` means `g = 1`.
    pub fn moments(&self, x_l: f64, x_r: f64, p: f64, g: Option<&dyn Fn(f64) -> f64>) -> Result<[f64; 3]> {
        let h = x_r - x_l;
        match g {
            None => {
                let l = local_moments(x_l, x_r, p, 3, &self.far)?;
                Ok([l[0], l[1], l[2]])
            }
            Some(g) => {
                let np = self.rule.len();
                let l = local_moments(x_l, x_r, p, np + 2, &self.far)?;
                let mut coeffs = vec![0.0; np];
                for (j, t) in self.rule.nodes.iter().enumerate() {
                    let gj = g(x_l + h * t);
                    for (c, b) in coeffs.iter_mut().zip(&self.basis[j]) {
                        *c += gj * b;
                    }
                }
                let mut out = [0.0; 3];
                for (m, slot) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (k, c) in coeffs.iter().enumerate() {
                        let lk = l[m + k];
                        // divergent low moments only occur with zero coefficient on the first element
                        if lk.is_finite() {
                            acc += c * lk;
                        } else if *c != 0.0 && m >= 2 {
                            return Err(Error::Integrability(format!("divergent moment t^{} x^-{p}", m + k)));
                        }
                    }
                    *slot = acc;
                }
                Ok(out)
            }
        }
    }

    /// `∫_e g` by the Gauss rule.
    pub fn integrate(&self, x_l: f64, x_r: f64, g: &dyn Fn(f64) -> f64) -> f64 {
        self.rule.integrate(x_l, x_r, g)
    }
}

/// Accumulates the mass-type matrix `∫ g x^-p φ_i φ_j` on the free nodes.
pub fn weighted_mass(
    mesh: &Mesh,
    integ: &ElementIntegrator,
    p: f64,
    g: Option<&dyn Fn(f64) -> f64>,
) -> Result<SymTridiag> {
    let mut m = SymTridiag::zeros(mesh.n);
    for e in 0..mesh.n {
        let (x_l, x_r) = (mesh.nodes[e], mesh.nodes[e + 1]);
        let wrap = |what: String| Error::Assembly { element: e, x_left: x_l, x_right: x_r, what };
        // on the first element only the phi_r^2 entry is used; lower moments may diverge
        let [i0, i1, i2] = integ.moments(x_l, x_r, p, g).map_err(|err| wrap(err.to_string()))?;
        if e == 0 {
            if !i2.is_finite() {
                return Err(wrap(format!("non-finite singular moment (p = {p})")));
            }
            m.add_diag(0, i2);
        } else {
            let (ll, lr, rr) = (i0 - 2.0 * i1 + i2, i1 - i2, i2);
            if !(ll.is_finite() && lr.is_finite() && rr.is_finite()) {
                return Err(wrap("non-finite element integral".into()));
            }
            m.add_block(e - 1, ll, lr, rr);
        }
    }
    Ok(m)
}

/// Accumulates `∫ g φ_i' φ_j'` (`g = None` means `g = 1`, integrated exactly).
pub fn weighted_stiffness(
    mesh: &Mesh,
    integ: &ElementIntegrator,
    g: Option<&dyn Fn(f64) -> f64>,
) -> Result<SymTridiag> {
    let mut m = SymTridiag::zeros(mesh.n);
    for e in 0..mesh.n {
        let (x_l, x_r) = (mesh.nodes[e], mesh.nodes[e + 1]);
        let h = x_r - x_l;
        let c = match g {
            None => 1.0 / h,
            Some(g) => integ.integrate(x_l, x_r, g) / (h * h),
        };
        if !c.is_finite() || !(c > 0.0) {
            return Err(Error::Assembly {
                element: e,
                x_left: x_l,
                x_right: x_r,
                what: format!("stiffness weight integral {c} is not positive"),
            });
        }
        if e == 0 {
            m.add_diag(0, c);
        } else {
            m.add_block(e - 1, c, -c, c);
        }
    }
    Ok(m)
}

/// Singular exponents and smooth factors of the two mass weights.
#[derive(Clone)]
pub struct WeightSplit {
    pub p_mass: f64,
    pub p_potential: f64,
    pub exact: bool,
}

impl WeightSplit {
    pub fn for_profile(profile: &CoefficientProfile, weights: &WeightPair) -> Result<Self> {
        Ok(match profile.power_params() {
            Some(p) => Self {
                p_mass: p.alpha,
                p_potential: p.alpha + p.gamma_d,
                exact: weights.is_unit(),
            },
            None => {
                let k_a = degeneracy_exponent(&profile.a)?.value;
                let k_d = degeneracy_exponent(&profile.d)?.value;
                Self { p_mass: k_a, p_potential: k_a + k_d, exact: false }
            }
        })
    }

    /// Smooth factor of `1/sigma = g x^-p_mass`.
    pub fn mass_factor<'a>(&self, profile: &'a CoefficientProfile, w: &'a WeightPair) -> impl Fn(f64) -> f64 + 'a {
        let p = self.p_mass;
        let power = profile.power_params().is_some();
        move |x| {
            if power {
                w.eta(x)
            } else {
                w.eta(x) * x.powf(p) / profile.a.eval(x)
            }
        }
    }

    /// Smooth factor of `1/(sigma d) = g x^-p_potential`.
    pub fn potential_factor<'a>(&self, profile: &'a CoefficientProfile, w: &'a WeightPair) -> impl Fn(f64) -> f64 + 'a {
        let p = self.p_potential;
        let power = profile.power_params().is_some();
        move |x| {
            if power {
                w.eta(x)
            } else {
                w.eta(x) * x.powf(p) / (profile.a.eval(x) * profile.d.eval(x))
            }
        }
    }
}

/// The four weak-form matrices on the free nodes.
#[derive(Debug, Clone)]
pub struct OperatorMatrices {
    /// `∫ φ_i φ_j / sigma`
    pub b: SymTridiag,
    /// `∫ eta φ_i' φ_j'`
    pub k: SymTridiag,
    /// `∫ φ_i' φ_j'`
    pub k0: SymTridiag,
    /// `∫ φ_i φ_j / (sigma d)`
    pub s: SymTridiag,
    pub mesh: Mesh,
    pub path: MomentPath,
    pub dirichlet_eliminated: bool,
}

impl OperatorMatrices {
    pub fn dim(&self) -> usize {
        self.mesh.n
    }

    /// Reduced index of the `x = 1` node.
    pub fn boundary(&self) -> usize {
        self.mesh.n - 1
    }

    /// `K - lambda S + beta e_N e_N^T`.
    pub fn coercive_operator(&self, lambda: f64, beta_damp: f64) -> SymTridiag {
        let mut a = SymTridiag::combine(&[(1.0, &self.k), (-lambda, &self.s)]);
        a.add_to_last(beta_damp);
        a
    }
}

pub fn assemble(profile: &CoefficientProfile, weights: &WeightPair, mesh: &Mesh) -> Result<OperatorMatrices> {
    assemble_with(profile, weights, mesh, AssemblyOptions::default())
}

pub fn assemble_with(
    profile: &CoefficientProfile,
    weights: &WeightPair,
    mesh: &Mesh,
    opts: AssemblyOptions,
) -> Result<OperatorMatrices> {
    let split = WeightSplit::for_profile(profile, weights)?;
    let path = match (opts.path, split.exact) {
        (MomentPath::Exact, false) => {
            return Err(Error::UnsupportedProfile(
                "exact moments need a drift-free power-law profile".into(),
            ))
        }
        (MomentPath::Auto, true) | (MomentPath::Exact, true) => MomentPath::Exact,
        _ => MomentPath::Gauss,
    };
    let integ = ElementIntegrator::new(opts.gauss_points)?;
    let gm = split.mass_factor(profile, weights);
    let gs = split.potential_factor(profile, weights);
    let eta = |x: f64| weights.eta(x);
    let (b, s, k) = if path == MomentPath::Exact {
        (
            weighted_mass(mesh, &integ, split.p_mass, None)?,
            weighted_mass(mesh, &integ, split.p_potential, None)?,
            weighted_stiffness(mesh, &integ, None)?,
        )
    } else {
        (
            weighted_mass(mesh, &integ, split.p_mass, Some(&gm))?,
            weighted_mass(mesh, &integ, split.p_potential, Some(&gs))?,
            weighted_stiffness(mesh, &integ, Some(&eta))?,
        )
    };
    let k0 = weighted_stiffness(mesh, &integ, None)?;
    Ok(OperatorMatrices { b, k, k0, s, mesh: mesh.clone(), path, dirichlet_eliminated: true })
}
