//! Coefficient profiles `(a, b, d)`, the Feller weight and the standing hypotheses.
//!
//! A profile is either the power-law family `a = x^alpha`, `b = mu x^beta_b`,
//! `d = x^gamma_d`, or three sampled functions on `[0, 1]`. Power-law paths use
//! closed forms everywhere; sampled paths fall back on central differences
//! and adaptive quadrature.

use crate::error::{Error, Result};
use crate::quadrature::integrate_adaptive;
use crate::spectral::HardyConstants;
use serde::Serialize;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

pub type SampledFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Relative step of the central differences used on sampled coefficients.
pub const DIFF_REL_STEP: f64 = 1e-6;
/// Deepest octave of the analysis grid, `x = 2^-52`.
pub const GEOMETRIC_DEPTH: i32 = 52;
const UNIFORM_FILL: usize = 64;
const SUP_REL_TOL: f64 = 1e-6;
const MAX_SUP_LEVELS: u32 = 8;

/// One scalar coefficient on `[0, 1]`.
#[derive(Clone)]
pub enum Coefficient {
    /// `scale * x^exponent`
    Power { scale: f64, exponent: f64 },
    Sampled(SampledFn),
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Power { scale, exponent } => {
                write!(f, "Power({scale} * x^{exponent})")
            }
            Coefficient::Sampled(_) => write!(f, "Sampled(..)"),
        }
    }
}

impl Coefficient {
    pub fn power(scale: f64, exponent: f64) -> Self {
        Coefficient::Power { scale, exponent }
    }

    pub fn sampled<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Coefficient::Sampled(Arc::new(f))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Coefficient::Power { scale, exponent } => {
                if *scale == 0.0 {
                    0.0
                } else if *exponent == 0.0 {
                    *scale
                } else {
                    scale * x.powf(*exponent)
                }
            }
            Coefficient::Sampled(f) => f(x),
        }
    }

    /// Exact for power laws; central difference with step `1e-6 * x` otherwise.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Coefficient::Power { scale, exponent } => {
                if *scale == 0.0 || *exponent == 0.0 {
                    0.0
                } else {
                    scale * exponent * x.powf(exponent - 1.0)
                }
            }
            Coefficient::Sampled(f) => {
                let h = if x > 0.0 { DIFF_REL_STEP * x } else { DIFF_REL_STEP };
                if x > h {
                    (f(x + h) - f(x - h)) / (2.0 * h)
                } else {
                    (f(x + h) - f(x)) / h
                }
            }
        }
    }

    pub fn is_power(&self) -> bool {
        matches!(self, Coefficient::Power { .. })
    }
}

/// Parameters of the power-law family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLaw {
    pub alpha: f64,
    pub mu: f64,
    pub beta_b: f64,
    pub gamma_d: f64,
}

impl PowerLaw {
    /// Exponent of the Feller integrand antiderivative, `beta_b - alpha + 1`.
    pub fn drift_power(&self) -> f64 {
        self.beta_b - self.alpha + 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    PowerLaw,
    Tabulated,
}

/// The coefficient triple with the singular-potential coefficient and the feedback gain.
#[derive(Debug, Clone)]
pub struct CoefficientProfile {
    pub a: Coefficient,
    pub b: Coefficient,
    pub d: Coefficient,
    pub lambda: f64,
    /// Boundary feedback gain (the damping `beta`).
    pub beta_damp: f64,
    power_law: Option<PowerLaw>,
}

impl CoefficientProfile {
    pub fn power_law(
        alpha: f64,
        mu: f64,
        beta_b: f64,
        gamma_d: f64,
        lambda: f64,
        beta_damp: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("a.alpha", alpha),
            ("b.mu", mu),
            ("b.beta", beta_b),
            ("d.gamma", gamma_d),
            ("lambda", lambda),
            ("beta_damp", beta_damp),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidCoefficient(format!("{name} = {v} is not finite")));
            }
        }
        if alpha <= 0.0 {
            return Err(Error::InvalidCoefficient(format!(
                "a = x^{alpha} does not vanish at 0 (need alpha > 0)"
            )));
        }
        if gamma_d <= 0.0 {
            return Err(Error::InvalidCoefficient(format!(
                "d = x^{gamma_d} does not vanish at 0 (need gamma > 0)"
            )));
        }
        if mu != 0.0 && beta_b <= alpha - 1.0 {
            return Err(Error::Integrability(format!(
                "b/a = mu x^({beta_b} - {alpha}) is not integrable at 0 (need beta_b > alpha - 1)"
            )));
        }
        if beta_damp < 0.0 {
            return Err(Error::InvalidCoefficient(format!(
                "beta_damp = {beta_damp} must be nonnegative"
            )));
        }
        Ok(Self {
            a: Coefficient::power(1.0, alpha),
            b: Coefficient::power(mu, beta_b),
            d: Coefficient::power(1.0, gamma_d),
            lambda,
            beta_damp,
            power_law: Some(PowerLaw { alpha, mu, beta_b, gamma_d }),
        })
    }

    /// Profile from three sampled functions. `a` and `d` are checked to vanish
    /// at 0 and stay positive on the analysis grid.
    pub fn tabulated(
        a: Coefficient,
        b: Coefficient,
        d: Coefficient,
        lambda: f64,
        beta_damp: f64,
    ) -> Result<Self> {
        if !lambda.is_finite() || !beta_damp.is_finite() || beta_damp < 0.0 {
            return Err(Error::InvalidCoefficient(format!(
                "lambda = {lambda}, beta_damp = {beta_damp} (need finite, beta_damp >= 0)"
            )));
        }
        for (name, g) in [("a", &a), ("d", &d)] {
            let g0 = g.eval(0.0);
            if g0 != 0.0 {
                return Err(Error::InvalidCoefficient(format!("{name}(0) = {g0}, must vanish")));
            }
            for x in analysis_grid(0).into_iter().filter(|x| *x > 0.0) {
                let v = g.eval(x);
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::InvalidCoefficient(format!(
                        "{name}({x:e}) = {v} must be finite and positive on (0, 1]"
                    )));
                }
            }
        }
        for x in analysis_grid(0) {
            let v = b.eval(x);
            if !v.is_finite() {
                return Err(Error::InvalidCoefficient(format!("b({x:e}) = {v} is not finite")));
            }
        }
        Ok(Self { a, b, d, lambda, beta_damp, power_law: None })
    }

    /// Loads a tabulated profile from a CSV with header `x,a,b,d`.
    pub fn from_csv(path: &Path, lambda: f64, beta_damp: f64) -> Result<Self> {
        let table = TabulatedData::read_csv(path)?;
        let (a, b, d) = table.into_coefficients()?;
        Self::tabulated(a, b, d, lambda, beta_damp)
    }

    pub fn kind(&self) -> ProfileKind {
        if self.power_law.is_some() {
            ProfileKind::PowerLaw
        } else {
            ProfileKind::Tabulated
        }
    }

    pub fn power_params(&self) -> Option<&PowerLaw> {
        self.power_law.as_ref()
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    pub fn with_beta_damp(&self, beta_damp: f64) -> Self {
        Self { beta_damp, ..self.clone() }
    }

    /// True for power-law profiles with `b = 0`, where `eta = 1` exactly.
    pub fn is_drift_free_power_law(&self) -> bool {
        matches!(self.power_law, Some(p) if p.mu == 0.0)
    }
}

/// Raw columns of a tabulated profile.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedData {
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub d: Vec<f64>,
}

impl TabulatedData {
    pub fn read_csv(path: &Path) -> Result<Self> {
        let io = |e: csv::Error| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(io)?;
        let mut data = TabulatedData { x: vec![], a: vec![], b: vec![], d: vec![] };
        for rec in reader.records() {
            let rec = rec.map_err(io)?;
            if rec.len() != 4 {
                return Err(Error::InvalidCoefficient(format!(
                    "{}: expected 4 columns x,a,b,d, found {}",
                    path.display(),
                    rec.len()
                )));
            }
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|e| {
                        Error::InvalidCoefficient(format!("{}: bad number {s:?}: {e}", path.display()))
                    })
                })
                .collect::<Result<_>>()?;
            data.x.push(vals[0]);
            data.a.push(vals[1]);
            data.b.push(vals[2]);
            data.d.push(vals[3]);
        }
        Ok(data)
    }

    /// `a` and `d` are interpolated log-log (piecewise power laws, so the
    /// degeneracy exponent near 0 is preserved); `b` linearly.
    pub fn into_coefficients(self) -> Result<(Coefficient, Coefficient, Coefficient)> {
        let n = self.x.len();
        if n < 3 {
            return Err(Error::InvalidCoefficient("tabulated profile needs at least 3 rows".into()));
        }
        if self.x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidCoefficient("x column must be strictly increasing".into()));
        }
        if self.x[0] < 0.0 || self.x[n - 1] < 1.0 {
            return Err(Error::InvalidCoefficient("x column must cover [0, 1]".into()));
        }
        let a = loglog_interpolant(&self.x, &self.a, "a")?;
        let d = loglog_interpolant(&self.x, &self.d, "d")?;
        let xs = Arc::new(self.x);
        let bs = Arc::new(self.b);
        let b = Coefficient::sampled(move |x| linear_interp(&xs, &bs, x));
        Ok((a, b, d))
    }
}

fn loglog_interpolant(x: &[f64], g: &[f64], name: &str) -> Result<Coefficient> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(g)
        .filter(|(xi, _)| **xi > 0.0)
        .map(|(xi, gi)| {
            if *gi > 0.0 && gi.is_finite() {
                Ok((xi.ln(), gi.ln()))
            } else {
                Err(Error::InvalidCoefficient(format!("{name}({xi}) = {gi} must be positive")))
            }
        })
        .collect::<Result<_>>()?;
    if pts.len() < 2 {
        return Err(Error::InvalidCoefficient(format!("{name}: need two positive samples")));
    }
    let (lx, lg): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (lx, lg) = (Arc::new(lx), Arc::new(lg));
    Ok(Coefficient::sampled(move |x| {
        if x <= 0.0 {
            return 0.0;
        }
        linear_interp(&lx, &lg, x.ln()).exp()
    }))
}

/// Piecewise-linear interpolation with linear extrapolation from the end segments.
fn linear_interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let i = match xs.partition_point(|v| *v <= x) {
        0 => 0,
        k if k >= n => n - 2,
        k => k - 1,
    };
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

/// Sorted analysis grid: `{0} ∪ {2^{-j/2^level}} ∪ {i / (64 * 2^level)}`.
///
/// The geometric part clusters at the degenerate endpoint so that sup/inf
/// evaluations see the `x -> 0` behaviour.
pub fn analysis_grid(level: u32) -> Vec<f64> {
    let per_octave = 1usize << level;
    let mut xs = vec![0.0];
    for j in 0..=(GEOMETRIC_DEPTH as usize * per_octave) {
        xs.push((-(j as f64) / per_octave as f64).exp2());
    }
    let m = UNIFORM_FILL * per_octave;
    for i in 1..=m {
        xs.push(i as f64 / m as f64);
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// Classification of a degeneracy exponent `K_g = sup x|g'|/g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Degeneracy {
    /// `K_g in (0, 1)`
    Weak,
    /// `K_g in [1, 2)`
    Strong,
    Neither,
}

impl Degeneracy {
    pub fn classify(k: f64) -> Self {
        if k > 0.0 && k < 1.0 {
            Degeneracy::Weak
        } else if (1.0..2.0).contains(&k) {
            Degeneracy::Strong
        } else {
            Degeneracy::Neither
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DegeneracyExponent {
    pub value: f64,
    pub class: Degeneracy,
    /// Grid refinement levels used (0 for closed form).
    pub levels: u32,
}

/// `sup_{(0,1]} x|g'(x)|/g(x)`.
///
/// Exact for power laws. Sampled functions are swept on refining analysis
/// grids until the supremum stabilizes to `1e-6` relative.
pub fn degeneracy_exponent(g: &Coefficient) -> Result<DegeneracyExponent> {
    match g {
        Coefficient::Power { scale, exponent } => {
            if !(*scale > 0.0) {
                return Err(Error::InvalidCoefficient(format!(
                    "power coefficient with scale {scale} is not positive on (0, 1]"
                )));
            }
            let value = exponent.abs();
            Ok(DegeneracyExponent { value, class: Degeneracy::classify(value), levels: 0 })
        }
        Coefficient::Sampled(_) => {
            let mut prev: Option<f64> = None;
            for level in 0..=MAX_SUP_LEVELS {
                let mut sup = 0.0_f64;
                for x in analysis_grid(level).into_iter().filter(|x| *x > 0.0) {
                    let gx = g.eval(x);
                    let ratio = x * g.derivative(x).abs() / gx;
                    if !gx.is_finite() || !(gx > 0.0) || !ratio.is_finite() {
                        return Err(Error::InvalidCoefficient(format!(
                            "non-finite degeneracy ratio at x = {x:e} (g = {gx})"
                        )));
                    }
                    sup = sup.max(ratio);
                }
                if let Some(p) = prev {
                    if (sup - p).abs() <= SUP_REL_TOL * sup.max(f64::MIN_POSITIVE) {
                        return Ok(DegeneracyExponent {
                            value: sup,
                            class: Degeneracy::classify(sup),
                            levels: level,
                        });
                    }
                }
                prev = Some(sup);
            }
            Err(Error::InvalidCoefficient(format!(
                "degeneracy supremum did not stabilize after {MAX_SUP_LEVELS} refinements"
            )))
        }
    }
}

struct EtaTable {
    nodes: Vec<f64>,
    log_eta: Vec<f64>,
    ratio: SampledFn,
}

const ETA_NODE_TOL: f64 = 1e-12;

impl fmt::Debug for EtaTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EtaTable({} nodes)", self.nodes.len())
    }
}

impl EtaTable {
    fn build(ratio: SampledFn) -> Result<Self> {
        let nodes = analysis_grid(0);
        let anchor = nodes
            .iter()
            .position(|x| *x == 0.5)
            .expect("analysis grid contains 1/2");
        let mut log_eta = vec![0.0; nodes.len()];
        for i in (anchor + 1)..nodes.len() {
            let r = ratio.clone();
            log_eta[i] = log_eta[i - 1] + integrate_adaptive(|s| r(s), nodes[i - 1], nodes[i], ETA_NODE_TOL)?;
        }
        for i in (0..anchor).rev() {
            let r = ratio.clone();
            log_eta[i] = log_eta[i + 1] - integrate_adaptive(|s| r(s), nodes[i], nodes[i + 1], ETA_NODE_TOL)?;
        }
        Ok(Self { nodes, log_eta, ratio })
    }

    fn log_eta(&self, x: f64) -> f64 {
        let k = self.nodes.partition_point(|v| *v <= x);
        let lo = k.saturating_sub(1).min(self.nodes.len() - 1);
        let hi = k.min(self.nodes.len() - 1);
        let j = if (x - self.nodes[lo]).abs() <= (self.nodes[hi] - x).abs() { lo } else { hi };
        if self.nodes[j] == x {
            return self.log_eta[j];
        }
        let r = &self.ratio;
        // Node integrals converged, so a failure here means x left [0, 1].
        self.log_eta[j] + integrate_adaptive(|s| r(s), self.nodes[j], x, ETA_NODE_TOL).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone)]
enum EtaRepr {
    /// `exp(mu (x^r - 2^-r) / r)`
    PowerLaw { mu: f64, r: f64 },
    Table(Arc<EtaTable>),
}

/// The Feller weight `eta = exp(∫_{1/2}^x b/a)` and `sigma = a / eta`.
#[derive(Debug, Clone)]
pub struct WeightPair {
    eta: EtaRepr,
    a: Coefficient,
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta_at_1: f64,
    pub sigma_at_1: f64,
}

impl WeightPair {
    pub fn eta(&self, x: f64) -> f64 {
        match &self.eta {
            EtaRepr::PowerLaw { mu, r } => {
                if *mu == 0.0 {
                    1.0
                } else {
                    (mu * (x.powf(*r) - 0.5_f64.powf(*r)) / r).exp()
                }
            }
            EtaRepr::Table(t) => t.log_eta(x).exp(),
        }
    }

    pub fn sigma(&self, x: f64) -> f64 {
        self.a.eval(x) / self.eta(x)
    }

    /// True when `eta` is identically one.
    pub fn is_unit(&self) -> bool {
        matches!(self.eta, EtaRepr::PowerLaw { mu, .. } if mu == 0.0)
    }

    fn finish(eta: EtaRepr, a: Coefficient) -> Result<Self> {
        let mut w = Self { eta, a, eta_min: 0.0, eta_max: 0.0, eta_at_1: 0.0, sigma_at_1: 0.0 };
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for x in analysis_grid(0) {
            let e = w.eta(x);
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::Integrability(format!("eta({x:e}) = {e} is not finite and positive")));
            }
            lo = lo.min(e);
            hi = hi.max(e);
        }
        w.eta_min = lo;
        w.eta_max = hi;
        w.eta_at_1 = w.eta(1.0);
        w.sigma_at_1 = w.a.eval(1.0) / w.eta_at_1;
        Ok(w)
    }

    /// Forces the adaptive-quadrature route even for power laws.
    pub fn by_quadrature(profile: &CoefficientProfile) -> Result<Self> {
        let (a, b) = (profile.a.clone(), profile.b.clone());
        let a2 = a.clone();
        let ratio: SampledFn = Arc::new(move |x| b.eval(x) / a2.eval(x));
        let table = EtaTable::build(ratio)?;
        Self::finish(EtaRepr::Table(Arc::new(table)), a)
    }
}

/// Builds `eta` and `sigma` for a profile.
pub fn feller_weight(profile: &CoefficientProfile) -> Result<WeightPair> {
    match profile.power_params() {
        Some(p) => {
            let r = p.drift_power();
            if p.mu != 0.0 && !(r > 0.0) {
                return Err(Error::Integrability(format!(
                    "b/a ~ x^{} is not integrable at 0",
                    r - 1.0
                )));
            }
            WeightPair::finish(EtaRepr::PowerLaw { mu: p.mu, r }, profile.a.clone())
        }
        None => WeightPair::by_quadrature(profile),
    }
}

/// One checked inequality `lhs (op) rhs` with its verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Check {
    pub fn lt(name: &str, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), lhs, rhs, holds: lhs < rhs }
    }
    pub fn le(name: &str, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), lhs, rhs, holds: lhs <= rhs }
    }
    pub fn gt(name: &str, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), lhs, rhs, holds: lhs > rhs }
    }
    pub fn ge(name: &str, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), lhs, rhs, holds: lhs >= rhs }
    }
    pub fn describe(&self) -> String {
        format!("{} (lhs = {:.6e}, rhs = {:.6e})", self.name, self.lhs, self.rhs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegeneracyReport {
    pub k_a: f64,
    pub k_d: f64,
    pub class_a: Degeneracy,
    pub class_d: Degeneracy,
    pub m_tilde: f64,
    pub m: f64,
    /// `sup x|b|/a`
    pub xb_over_a_sup: f64,
    pub epsilon0: f64,
    pub hyp1_ok: bool,
    pub hyp2_ok: bool,
    /// Structural part of the collected hypothesis (items on a, b, d); the
    /// lambda item is reported by `hyp2_ok` and `lambda_range_ok`.
    pub hyp3_ok: bool,
    pub ass2_ok: bool,
    pub lambda_range_ok: bool,
    /// Lower end of the admissible negative-lambda interval.
    pub lambda_lower: f64,
    /// Upper end `1 / C_HP`.
    pub lambda_upper: f64,
    pub diagnostics: Vec<String>,
    pub checks: Vec<Check>,
}

impl DegeneracyReport {
    /// Everything except the lambda conditions.
    pub fn structural_ok(&self) -> bool {
        self.hyp1_ok && self.hyp3_ok && self.ass2_ok
    }

    pub fn all_ok(&self) -> bool {
        self.structural_ok() && self.hyp2_ok && self.lambda_range_ok
    }

    /// `1 + 3/2 K_a + K_d + M`, the factor in the negative-lambda range.
    pub fn lambda_factor(&self) -> f64 {
        1.0 + 1.5 * self.k_a + self.k_d + self.m
    }
}

/// `sup_{(0,1]} |x^power * b / a|`, and whether it looks bounded as x -> 0.
fn sup_weighted_drift(profile: &CoefficientProfile, power: f64) -> (f64, bool) {
    if let Some(p) = profile.power_params() {
        if p.mu == 0.0 {
            return (0.0, true);
        }
        let e = power + p.beta_b - p.alpha;
        return if e >= 0.0 { (p.mu.abs(), true) } else { (f64::INFINITY, false) };
    }
    let f = |x: f64| (x.powf(power) * profile.b.eval(x) / profile.a.eval(x)).abs();
    let grid = analysis_grid(1);
    let sup = grid.iter().filter(|x| **x > 0.0).map(|x| f(*x)).fold(0.0_f64, f64::max);
    // bounded unless it is still growing over the last ten octaves
    let tail = f((-(GEOMETRIC_DEPTH as f64)).exp2());
    let before = f((-(GEOMETRIC_DEPTH as f64 - 10.0)).exp2());
    let bounded = sup.is_finite() && !(tail > 1.1 * before && tail >= sup * (1.0 - 1e-12));
    (if bounded { sup } else { f64::INFINITY }, bounded)
}

fn nondecreasing_on_grid<F: Fn(f64) -> f64>(f: F) -> bool {
    let vals: Vec<f64> = analysis_grid(0).into_iter().filter(|x| *x > 0.0).map(f).collect();
    vals.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9) - 1e-300)
}

/// Evaluates every standing hypothesis and the constants `M~`, `M`, `eps0`.
///
/// `hardy` should carry the constants used for certification (see
/// [`HardyConstants::certified`]).
pub fn check_hypotheses(profile: &CoefficientProfile, hardy: &HardyConstants) -> Result<DegeneracyReport> {
    let ka = degeneracy_exponent(&profile.a)?;
    let kd = degeneracy_exponent(&profile.d)?;
    let (k_a, k_d) = (ka.value, kd.value);
    let mut checks = Vec::new();

    // b continuous and b/a integrable
    let (b_continuous, b_sup) = match profile.power_params() {
        Some(p) if p.mu != 0.0 => (p.beta_b >= 0.0, if p.beta_b >= 0.0 { p.mu.abs() } else { f64::INFINITY }),
        Some(_) => (true, 0.0),
        None => {
            let sup = analysis_grid(1).into_iter().map(|x| profile.b.eval(x).abs()).fold(0.0, f64::max);
            (sup.is_finite(), sup)
        }
    };
    let integrable = match profile.power_params() {
        Some(p) => p.mu == 0.0 || p.beta_b > p.alpha - 1.0,
        None => {
            let (a, b) = (profile.a.clone(), profile.b.clone());
            integrate_adaptive(move |x| (b.eval(x) / a.eval(x)).abs(), 0.0, 1.0, 1e-10).is_ok()
        }
    };
    checks.push(Check { name: "b continuous on [0,1]".into(), lhs: b_sup, rhs: f64::INFINITY, holds: b_continuous });
    checks.push(Check { name: "b/a integrable on (0,1)".into(), lhs: f64::NAN, rhs: f64::NAN, holds: integrable });
    checks.push(Check::gt("K_a > 0", k_a, 0.0));
    checks.push(Check::lt("K_a < 2", k_a, 2.0));
    checks.push(Check::gt("K_d > 0", k_d, 0.0));
    checks.push(Check::lt("K_d < 2", k_d, 2.0));

    let mono_a = match profile.power_params() {
        Some(_) => true,
        None => nondecreasing_on_grid(|x| x.powf(k_a) / profile.a.eval(x)),
    };
    let mono_d = match profile.power_params() {
        Some(_) => true,
        None => nondecreasing_on_grid(|x| x.powf(k_d) / profile.d.eval(x)),
    };
    checks.push(Check { name: "x^K_a / a nondecreasing".into(), lhs: k_a, rhs: f64::NAN, holds: mono_a });
    checks.push(Check { name: "x^K_d / d nondecreasing".into(), lhs: k_d, rhs: f64::NAN, holds: mono_d });

    let a1 = profile.a.eval(1.0);
    let m_tilde = b_sup / a1;
    let (xba_sup, xba_bounded) = sup_weighted_drift(profile, 1.0);
    let (xkba_sup, _) = sup_weighted_drift(profile, k_a);
    checks.push(Check::le("|x^K_a b/a| <= M~", xkba_sup, m_tilde * (1.0 + 1e-12)));
    let m = if k_a <= 1.0 { m_tilde } else { xba_sup };

    let hyp1_ok = b_continuous
        && integrable
        && k_a > 0.0
        && k_a < 2.0
        && k_d > 0.0
        && k_d < 2.0
        && mono_a
        && mono_d;

    let sum = k_a + 2.0 * k_d;
    checks.push(Check::le("K_a + 2 K_d <= 2", sum, 2.0));
    let xba_ok = k_a <= 1.0 || xba_bounded;
    checks.push(Check {
        name: "K_a > 1 implies x b / a bounded".into(),
        lhs: xba_sup,
        rhs: f64::INFINITY,
        holds: xba_ok,
    });
    let hyp3_ok = ka.class != Degeneracy::Neither
        && kd.class != Degeneracy::Neither
        && b_continuous
        && integrable
        && sum <= 2.0
        && xba_ok;

    let epsilon0 = (2.0 - k_a - 2.0 * k_d) - 2.0 * xba_sup;
    checks.push(Check::gt("eps0 = (2 - K_a - 2 K_d) - 2 sup x|b|/a > 0", epsilon0, 0.0));
    let ass2_ok = hyp3_ok && epsilon0 > 0.0;

    let c_hp = hardy.c_hp;
    let lambda = profile.lambda;
    let lambda_upper = 1.0 / c_hp;
    let hyp2 = Check::lt("lambda < 1/C_HP", lambda, lambda_upper);
    let hyp2_ok = hyp2.holds;
    checks.push(hyp2);
    let factor = 1.0 + 1.5 * k_a + k_d + m;
    let lambda_lower = -epsilon0 / (2.0 * c_hp * factor);
    let lower_ok = if lambda < 0.0 {
        let c = Check::gt("lambda > -eps0 / (2 C_HP (1 + 3/2 K_a + K_d + M))", lambda, lambda_lower);
        let ok = c.holds;
        checks.push(c);
        ok
    } else {
        true
    };
    let lambda_range_ok = hyp2_ok && lower_ok;

    if let Some(p) = profile.power_params() {
        // conditions of the power-law example
        checks.push(Check::ge("example: beta_b >= 0", p.beta_b, 0.0));
        checks.push(Check::gt("example: beta_b > alpha - 1", p.beta_b, p.alpha - 1.0));
        checks.push(Check::gt(
            "example: 2 - alpha - 2 gamma > 2 |mu|",
            2.0 - p.alpha - 2.0 * p.gamma_d,
            2.0 * p.mu.abs(),
        ));
    }

    let diagnostics = checks
        .iter()
        .filter(|c| !c.holds && !c.name.starts_with("example:"))
        .map(Check::describe)
        .collect();

    Ok(DegeneracyReport {
        k_a,
        k_d,
        class_a: ka.class,
        class_d: kd.class,
        m_tilde,
        m,
        xb_over_a_sup: xba_sup,
        epsilon0,
        hyp1_ok,
        hyp2_ok,
        hyp3_ok,
        ass2_ok,
        lambda_range_ok,
        lambda_lower,
        lambda_upper,
        diagnostics,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hardy(c_hp: f64) -> HardyConstants {
        HardyConstants::from_values(c_hp, 0.5 * c_hp)
    }

    #[test]
    fn power_exponents_are_exact() {
        let k = degeneracy_exponent(&Coefficient::power(1.0, 0.5)).unwrap();
        assert_eq!(k.value, 0.5);
        assert_eq!(k.class, Degeneracy::Weak);
        let k = degeneracy_exponent(&Coefficient::power(1.0, 2.0)).unwrap();
        assert_eq!(k.value, 2.0);
        assert_eq!(k.class, Degeneracy::Neither);
    }

    #[test]
    fn sampled_exponent_of_x_two_minus_x() {
        let g = Coefficient::sampled(|x| x * (2.0 - x));
        let k = degeneracy_exponent(&g).unwrap();
        // dense-sampling oracle of the closed-form ratio (2 - 2x)/(2 - x)
        let oracle = (1..=200_000)
            .map(|i| {
                let x = (-(i as f64) * 52.0 / 200_000.0).exp2();
                (2.0 - 2.0 * x) / (2.0 - x)
            })
            .fold(0.0_f64, f64::max);
        assert!((oracle - 1.0).abs() < 1e-12);
        assert!((k.value - oracle).abs() < 1e-6, "{}", k.value);
        assert_eq!(k.class, Degeneracy::Strong);
    }

    #[test]
    fn sampled_exponent_rejects_nonfinite() {
        let g = Coefficient::sampled(|x| if x < 0.25 { f64::NAN } else { x });
        assert!(matches!(degeneracy_exponent(&g), Err(Error::InvalidCoefficient(_))));
    }

    #[test]
    fn feller_weight_without_drift_is_one() {
        let p = CoefficientProfile::power_law(0.5, 0.0, 1.0, 0.25, 0.0, 1.0).unwrap();
        let w = feller_weight(&p).unwrap();
        assert!(w.is_unit());
        assert_eq!(w.eta_min, 1.0);
        assert_eq!(w.eta_max, 1.0);
        assert_eq!(w.sigma(0.3), 0.3_f64.powf(0.5));
    }

    #[test]
    fn feller_weight_linear_drift() {
        let p = CoefficientProfile::power_law(1.0, 1.0, 1.0, 0.25, 0.0, 1.0).unwrap();
        let w = feller_weight(&p).unwrap();
        assert!((w.eta(1.0) - 0.5_f64.exp()).abs() < 1e-15);
        assert!((w.eta(0.2) - (-0.3_f64).exp()).abs() < 1e-15);
        assert!((w.eta_at_1 - 1.648_721_270_700_128).abs() < 1e-12);
    }

    #[test]
    fn feller_weight_quadrature_matches_closed_form() {
        let p = CoefficientProfile::power_law(0.5, 0.1, 1.0, 0.25, 0.0, 1.0).unwrap();
        let closed = feller_weight(&p).unwrap();
        let quad = WeightPair::by_quadrature(&p).unwrap();
        let exact = (0.1 * (1.0 - 0.5_f64.powf(1.5)) / 1.5).exp();
        assert!((closed.eta_at_1 - exact).abs() < 1e-15);
        assert!((quad.eta_at_1 - exact).abs() <= 1e-9 * exact);
        for x in [0.0, 1e-9, 0.013, 0.37, 0.5, 0.81] {
            assert!((quad.eta(x) - closed.eta(x)).abs() <= 1e-9 * closed.eta(x), "x = {x}");
        }
    }

    #[test]
    fn power_law_rejects_nondegenerate_a() {
        assert!(CoefficientProfile::power_law(0.0, 0.0, 1.0, 0.25, 0.0, 1.0).is_err());
        assert!(CoefficientProfile::power_law(0.5, 0.1, -0.6, 0.25, 0.0, 1.0).is_err());
        assert!(CoefficientProfile::power_law(0.5, 0.0, 1.0, 0.25, 0.0, -1.0).is_err());
    }

    #[test]
    fn example_profile_passes_everything() {
        let p = CoefficientProfile::power_law(0.5, 0.1, 1.0, 0.25, 0.0, 1.0).unwrap();
        let r = check_hypotheses(&p, &hardy(1.0)).unwrap();
        assert!(r.all_ok(), "{:?}", r.diagnostics);
        assert!((r.epsilon0 - 0.8).abs() < 1e-15);
        assert!(r.checks.iter().filter(|c| c.name.starts_with("example:")).all(|c| c.holds));
    }

    #[test]
    fn drift_free_eps0() {
        let p = CoefficientProfile::power_law(0.5, 0.0, 1.0, 0.25, 0.0, 1.0).unwrap();
        let r = check_hypotheses(&p, &hardy(1.0)).unwrap();
        assert_eq!(r.epsilon0, 1.0);
        assert_eq!(r.m_tilde, 0.0);
    }

    #[test]
    fn too_degenerate_fails_hyp3() {
        let p = CoefficientProfile::power_law(1.0, 0.0, 1.0, 0.6, 0.0, 1.0).unwrap();
        let r = check_hypotheses(&p, &hardy(1.0)).unwrap();
        assert!(!r.hyp3_ok);
        assert!(!r.ass2_ok);
        assert!(r.diagnostics.iter().any(|d| d.contains("K_a + 2 K_d <= 2")));
    }

    #[test]
    fn lambda_range_has_both_ends() {
        let p = CoefficientProfile::power_law(0.5, 0.1, 1.0, 0.25, 0.0, 1.0).unwrap();
        let h = hardy(2.0);
        let r = check_hypotheses(&p.with_lambda(0.49), &h).unwrap();
        assert!(r.lambda_range_ok);
        let r = check_hypotheses(&p.with_lambda(0.5), &h).unwrap();
        assert!(!r.hyp2_ok && !r.lambda_range_ok);
        // -eps0 / (2 C_HP (1 + 0.75 + 0.25 + 0.1)) = -0.8 / 8.4
        let lower = -0.8 / (2.0 * 2.0 * 2.1);
        assert!((r.lambda_lower - lower).abs() < 1e-15);
        assert!(check_hypotheses(&p.with_lambda(lower * 0.99), &h).unwrap().lambda_range_ok);
        assert!(!check_hypotheses(&p.with_lambda(lower * 1.01), &h).unwrap().lambda_range_ok);
    }

    #[test]
    fn strong_degeneracy_uses_xb_over_a() {
        let p = CoefficientProfile::power_law(1.5, 0.02, 1.0, 0.2, 0.0, 1.0).unwrap();
        let r = check_hypotheses(&p, &hardy(1.0)).unwrap();
        assert_eq!(r.m, 0.02);
        assert!(r.hyp3_ok);
        assert!((r.epsilon0 - (2.0 - 1.5 - 0.4 - 0.04)).abs() < 1e-15);
    }

    #[test]
    fn tabulated_profile_matches_power_law_checks() {
        let t = CoefficientProfile::tabulated(
            Coefficient::sampled(|x| x.sqrt()),
            Coefficient::sampled(|x| 0.1 * x),
            Coefficient::sampled(|x| x.powf(0.25)),
            0.0,
            1.0,
        )
        .unwrap();
        let r = check_hypotheses(&t, &hardy(1.0)).unwrap();
        assert!((r.k_a - 0.5).abs() < 1e-6);
        assert!((r.k_d - 0.25).abs() < 1e-6);
        assert!((r.epsilon0 - 0.8).abs() < 1e-5, "{}", r.epsilon0);
        assert!(r.all_ok(), "{:?}", r.diagnostics);
    }

    #[test]
    fn csv_roundtrip_interpolates_power_laws() {
        let dir = std::env::temp_dir().join(format!("dwave-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("profile.csv");
        let mut text = String::from("x,a,b,d\n0,0,0,0\n");
        for i in 1..=40 {
            let x = (i as f64 / 40.0).powi(3);
            text += &format!("{x},{},{},{}\n", x.sqrt(), 0.1 * x, x.powf(0.25));
        }
        std::fs::write(&path, text).unwrap();
        let p = CoefficientProfile::from_csv(&path, 0.0, 1.0).unwrap();
        assert_eq!(p.kind(), ProfileKind::Tabulated);
        assert!((p.a.eval(1e-9) - 1e-9_f64.sqrt()).abs() < 1e-12);
        let k = degeneracy_exponent(&p.a).unwrap();
        assert!((k.value - 0.5).abs() < 1e-6);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn analysis_grid_covers_endpoints() {
        let g = analysis_grid(0);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(g.contains(&0.5));
        assert!(g.contains(&(-52f64).exp2()));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
