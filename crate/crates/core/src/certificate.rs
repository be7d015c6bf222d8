//! Decay certificate `E(t) <= E(0) e^(1 - t/M)` and its empirical checks.

use crate::coefficients::{Check, CoefficientProfile, DegeneracyReport, WeightPair};
use crate::dynamics::EnergyTrace;
use crate::error::{Error, Result};
use crate::spectral::{HardyConstants, LambdaGauge};
use serde::Serialize;

/// Reading of the `lambda_HP` symbol in the `delta_0` formula.
pub const LAMBDA_HP_READING: &str = "lambda*C_HP";
/// Relative slack allowed when comparing a trace against the bound.
pub const BOUND_ROUNDOFF: f64 = 1e-8;
pub const DELTA_GRID: usize = 64;
/// Samples with energy at or below this are ignored by the rate fit.
pub const FIT_ENERGY_FLOOR: f64 = 1e-300;
pub const FIT_MIN_SAMPLES: usize = 10;

/// `Theta = (2 / 1_eps) max{1/a(1) + K_a C~_HP / (4 min eta), 1 + K_a/4}`.
pub fn theta(k_a: f64, one_eps: f64, c_hp_tilde: f64, eta_min: f64, a_at_1: f64) -> f64 {
    let first = 1.0 / a_at_1 + k_a * c_hp_tilde / (4.0 * eta_min);
    let second = 1.0 + k_a / 4.0;
    2.0 / one_eps * first.max(second)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaBranch {
    Nonnegative,
    Negative,
}

/// Every input of the constant formulas, gathered once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateInputs {
    pub k_a: f64,
    pub k_d: f64,
    pub m: f64,
    pub epsilon0: f64,
    pub lambda: f64,
    pub beta: f64,
    pub c_hp: f64,
    pub c_hp_tilde: f64,
    pub one_eps: f64,
    pub c_lambda: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta_at_1: f64,
    pub sigma_at_1: f64,
    pub a_at_1: f64,
    pub d_at_1: f64,
}

impl CertificateInputs {
    pub fn gather(
        report: &DegeneracyReport,
        gauge: &LambdaGauge,
        hardy: &HardyConstants,
        weights: &WeightPair,
        profile: &CoefficientProfile,
    ) -> Self {
        Self {
            k_a: report.k_a,
            k_d: report.k_d,
            m: report.m,
            epsilon0: report.epsilon0,
            lambda: profile.lambda,
            beta: profile.beta_damp,
            c_hp: hardy.c_hp,
            c_hp_tilde: hardy.c_hp_tilde,
            one_eps: gauge.one_eps,
            c_lambda: gauge.c_lambda,
            eta_min: weights.eta_min,
            eta_max: weights.eta_max,
            eta_at_1: weights.eta_at_1,
            sigma_at_1: weights.sigma_at_1,
            a_at_1: profile.a.eval(1.0),
            d_at_1: profile.d.eval(1.0),
        }
    }

    pub fn branch(&self) -> LambdaBranch {
        if self.lambda >= 0.0 {
            LambdaBranch::Nonnegative
        } else {
            LambdaBranch::Negative
        }
    }

    /// `1 + 3/2 K_a + K_d + M`
    pub fn lambda_factor(&self) -> f64 {
        1.0 + 1.5 * self.k_a + self.k_d + self.m
    }

    pub fn theta(&self) -> f64 {
        theta(self.k_a, self.one_eps, self.c_hp_tilde, self.eta_min, self.a_at_1)
    }

    pub fn c1(&self) -> f64 {
        2.0 * self.theta() + 1.0 / self.sigma_at_1 + 1.0 / self.eta_at_1 + self.beta / self.eta_at_1 + self.k_a / 4.0
    }

    pub fn c2(&self) -> f64 {
        let b = self.beta;
        let base = b * b / self.eta_at_1 + self.k_a * b / 2.0 + b / self.eta_at_1 + self.k_a / 4.0 + b * self.epsilon0 / 2.0;
        match self.branch() {
            LambdaBranch::Nonnegative => base + self.lambda / (self.sigma_at_1 * self.d_at_1),
            LambdaBranch::Negative => base,
        }
    }

    pub fn c3(&self, delta: f64) -> f64 {
        let (oe, cl2, em) = (self.one_eps, self.c_lambda * self.c_lambda, self.eta_min);
        2.0 / oe
            + 2.0 * self.c_hp_tilde * cl2 / (oe * oe * em * em)
            + 1.0 / (2.0 * delta)
            + (self.c_hp_tilde + self.eta_max) * cl2 * cl2 / (2.0 * delta)
    }

    pub fn c4(&self) -> f64 {
        let cl2 = self.c_lambda * self.c_lambda;
        (1.0 + cl2 / (self.one_eps * self.eta_min * self.eta_min)) / self.one_eps
    }

    /// `2 lambda C_HP (1 + 3/2 K_a + K_d + M)`, with `lambda_HP` read as `lambda * C_HP`.
    pub fn lambda_shift(&self) -> f64 {
        2.0 * self.lambda * self.c_hp * self.lambda_factor()
    }

    pub fn delta0(&self) -> f64 {
        let c2c4 = self.c2() * self.c4();
        (self.epsilon0 / c2c4).min((self.epsilon0 + self.lambda_shift()) / c2c4)
    }

    /// Denominator of `M` at `delta`.
    pub fn denominator(&self, delta: f64) -> f64 {
        let base = self.epsilon0 - self.c2() * self.c4() * delta;
        match self.branch() {
            LambdaBranch::Nonnegative => base,
            LambdaBranch::Negative => base + self.lambda_shift(),
        }
    }

    pub fn m_script(&self, delta: f64) -> f64 {
        (self.c1() + self.c2() * self.c3(delta)) / self.denominator(delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCertificate {
    pub theta: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub delta: f64,
    pub delta0: f64,
    pub m_script: f64,
    pub lambda_admissible: bool,
    pub branch: LambdaBranch,
    pub epsilon0: f64,
    pub lambda_factor: f64,
    pub delta_optimized: bool,
    pub lambda_hp_reading: &'static str,
    pub bound_formula: &'static str,
    pub inputs: CertificateInputs,
    pub assumption_ledger: Vec<Check>,
}

impl DecayCertificate {
    pub fn bound_at(&self, e0: f64, t: f64) -> f64 {
        e0 * (1.0 - t / self.m_script).exp()
    }

    /// Test-only variant with the time constant rescaled.
    #[doc(hidden)]
    pub fn with_m_script(&self, m_script: f64) -> Self {
        Self { m_script, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct CertificateOptions {
    /// Minimize `M` over a 64-point grid in `(0, delta_0)` instead of `delta_0 / 2`.
    pub optimize_delta: bool,
}

pub fn compute_certificate(
    report: &DegeneracyReport,
    gauge: &LambdaGauge,
    hardy: &HardyConstants,
    weights: &WeightPair,
    profile: &CoefficientProfile,
    opts: CertificateOptions,
) -> Result<DecayCertificate> {
    if !report.structural_ok() {
        let mut why = report.diagnostics.clone();
        if why.is_empty() {
            why.push("standing hypotheses not satisfied".into());
        }
        return Err(Error::HypothesisRefused(why));
    }
    let inputs = CertificateInputs::gather(report, gauge, hardy, weights, profile);
    let lambda = inputs.lambda;
    if !(lambda * inputs.c_hp < 1.0) {
        return Err(Error::InadmissibleLambda(format!(
            "lambda < 1/C_HP violated: lambda = {lambda:.6e}, 1/C_HP = {:.6e}",
            1.0 / inputs.c_hp
        )));
    }
    let lower = -inputs.epsilon0 / (2.0 * inputs.c_hp * inputs.lambda_factor());
    if lambda < 0.0 && !(lambda > lower) {
        return Err(Error::InadmissibleLambda(format!(
            "lambda > -eps0 / (2 C_HP (1 + 3/2 K_a + K_d + M)) violated: lambda = {lambda:.6e}, bound = {lower:.6e}"
        )));
    }
    let delta0 = inputs.delta0();
    if !(delta0 > 0.0) || !delta0.is_finite() {
        return Err(Error::HypothesisRefused(vec![format!(
            "delta_0 = {delta0:.6e} must be positive (eps0 = {:.6e}, C2 C4 = {:.6e})",
            inputs.epsilon0,
            inputs.c2() * inputs.c4()
        )]));
    }
    let (delta, optimized) = if opts.optimize_delta {
        let best = (1..=DELTA_GRID)
            .map(|k| delta0 * k as f64 / (DELTA_GRID + 1) as f64)
            .filter(|d| inputs.denominator(*d) > 0.0)
            .min_by(|x, y| inputs.m_script(*x).total_cmp(&inputs.m_script(*y)))
            .unwrap_or(0.5 * delta0);
        (best, true)
    } else {
        (0.5 * delta0, false)
    };
    let m_script = inputs.m_script(delta);
    if !(m_script > 0.0) || !m_script.is_finite() {
        return Err(Error::HypothesisRefused(vec![format!(
            "M = {m_script:.6e} is not a positive finite time constant"
        )]));
    }
    Ok(DecayCertificate {
        theta: inputs.theta(),
        c1: inputs.c1(),
        c2: inputs.c2(),
        c3: inputs.c3(delta),
        c4: inputs.c4(),
        delta,
        delta0,
        m_script,
        lambda_admissible: true,
        branch: inputs.branch(),
        epsilon0: inputs.epsilon0,
        lambda_factor: inputs.lambda_factor(),
        delta_optimized: optimized,
        lambda_hp_reading: LAMBDA_HP_READING,
        bound_formula: "E(t) <= E(0) * exp(1 - t / m_script) for t >= m_script",
        inputs,
        assumption_ledger: report.checks.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayVerdict {
    pub holds: bool,
    /// `min bound/E` over checked samples; `None` when no sample had positive energy.
    pub margin: Option<f64>,
    pub checked_samples: usize,
    pub first_violation: Option<f64>,
    /// True when the tail after an early stop was covered by monotonicity.
    pub tail_by_monotonicity: bool,
}

/// Checks `E(t_n) <= E(0) e^(1 - t_n/M) (1 + 1e-8)` for all samples with `t_n >= M`.
///
/// A trace that stopped early (energy floor or step budget) is extended by monotonicity:
/// `E(t) <= E(t_stop)` for `t_stop <= t <= t_final`, and the bound is smallest at `t_final`.
pub fn verify_decay_bound(trace: &EnergyTrace, cert: &DecayCertificate) -> Result<DecayVerdict> {
    if trace.t_final < cert.m_script {
        return Err(Error::InsufficientHorizon { required: cert.m_script, available: trace.t_final });
    }
    let e0 = trace.e0();
    let mut verdict =
        DecayVerdict { holds: true, margin: None, checked_samples: 0, first_violation: None, tail_by_monotonicity: false };
    let consider = |t: f64, e: f64, bound_time: f64, v: &mut DecayVerdict| {
        v.checked_samples += 1;
        let bound = cert.bound_at(e0, bound_time);
        if e > bound * (1.0 + BOUND_ROUNDOFF) {
            v.holds = false;
            v.first_violation.get_or_insert(t);
        }
        if e > 0.0 {
            let r = bound / e;
            v.margin = Some(v.margin.map_or(r, |m: f64| m.min(r)));
        }
    };
    for (t, e) in trace.times.iter().zip(&trace.energy) {
        if *t >= cert.m_script {
            consider(*t, *e, *t, &mut verdict);
        }
    }
    if trace.terminated_early {
        let t_stop = *trace.times.last().unwrap_or(&0.0);
        let e_stop = *trace.energy.last().unwrap_or(&0.0);
        if trace.t_final > t_stop {
            if trace.max_step_increase > BOUND_ROUNDOFF * e0 {
                // the tail argument needs a nonincreasing energy
                verdict.holds = false;
                verdict.first_violation.get_or_insert(t_stop);
            } else {
                consider(trace.t_final, e_stop, trace.t_final, &mut verdict);
                verdict.tail_by_monotonicity = true;
            }
        }
    }
    Ok(verdict)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Least-squares slope of `ln E` on `[t_start, t_final]`; `rate = -slope`.
pub fn fit_decay_rate(trace: &EnergyTrace, t_start: f64) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = trace
        .times
        .iter()
        .zip(&trace.energy)
        .filter(|(t, e)| **t >= t_start && **e > FIT_ENERGY_FLOOR)
        .map(|(t, e)| (*t, e.ln()))
        .collect();
    if pts.len() < FIT_MIN_SAMPLES {
        return Err(Error::Fit(format!(
            "{} usable samples after t = {t_start}, need {FIT_MIN_SAMPLES}",
            pts.len()
        )));
    }
    // shifting by the first sample makes a constant trace fit exactly
    let (t0, l0) = pts[0];
    let pts: Vec<(f64, f64)> = pts.iter().map(|(t, l)| (t - t0, l - l0)).collect();
    let n = pts.len() as f64;
    let (mt, ml) = pts.iter().fold((0.0, 0.0), |(a, b), (t, l)| (a + t / n, b + l / n));
    let (mut stt, mut stl, mut sll) = (0.0, 0.0, 0.0);
    for (t, l) in &pts {
        stt += (t - mt) * (t - mt);
        stl += (t - mt) * (l - ml);
        sll += (l - ml) * (l - ml);
    }
    if stt == 0.0 {
        return Err(Error::Fit("all samples at the same time".into()));
    }
    let slope = stl / stt;
    let r_squared = if sll == 0.0 { 1.0 } else { stl * stl / (stt * sll) };
    Ok(DecayFit { rate: 0.0 - slope, r_squared, samples: pts.len() })
}
