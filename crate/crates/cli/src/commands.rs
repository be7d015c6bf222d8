use crate::config::{InitialPreset, ProfileSpec, RunConfig, SweepRange};
use crate::{CliError, Outcome, EXIT_HYPOTHESIS, EXIT_LAMBDA, EXIT_NUMERICAL, EXIT_OK};
use dwave::spectral::HardySampleCheck;
use dwave::{
    assemble_with, best_constants, build_mesh, check_hypotheses, compute_certificate, feller_weight, fit_decay_rate,
    identity_refinement, initial_state, lambda_gauge, random_hardy_check, simulate_observed, trace_bound_check,
    verify_decay_bound, AssemblyOptions, CertificateOptions, CoefficientProfile, DecayCertificate, DegeneracyReport,
    EnergyTrace, HardyConstants, InitialData, Mesh, MomentPath, SimulationConfig, WeightPair,
};
use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Tolerance of the sampled Hardy check, relative to `∫ eta u'^2`.
const SAMPLE_TOL: f64 = 1e-10;

/// Everything known about a configured profile before certification.
pub struct Analysis {
    pub profile: CoefficientProfile,
    pub weights: WeightPair,
    pub mesh: Mesh,
    pub options: AssemblyOptions,
    /// Safety-inflated constants; `None` only when the structural screen failed
    /// and the constants could not be computed.
    pub hardy: Option<HardyConstants>,
    pub report: DegeneracyReport,
}

impl Analysis {
    /// Refusal with exit code 2 or 3 if the profile cannot be certified.
    pub fn require_certifiable(&self) -> Result<&HardyConstants, CliError> {
        if !self.report.structural_ok() {
            let why: Vec<String> = self
                .report
                .checks
                .iter()
                .filter(|c| !c.holds && !c.name.starts_with("lambda") && !c.name.starts_with("example:"))
                .map(|c| c.describe())
                .collect();
            return Err(dwave::Error::HypothesisRefused(why).into());
        }
        let hardy = self.hardy.as_ref().ok_or_else(|| dwave::Error::Spectral("Hardy constants unavailable".into()))?;
        if let Some(c) = self.report.checks.iter().find(|c| c.name.starts_with("lambda") && !c.holds) {
            return Err(dwave::Error::InadmissibleLambda(format!("{} violated: lambda = {:.6e}, bound = {:.6e}", c.name, c.lhs, c.rhs)).into());
        }
        Ok(hardy)
    }

    pub fn certificate(&self, optimize_delta: bool) -> Result<DecayCertificate, CliError> {
        let hardy = self.require_certifiable()?;
        let gauge = lambda_gauge(self.profile.lambda, hardy, self.weights.eta_min)?;
        Ok(compute_certificate(&self.report, &gauge, hardy, &self.weights, &self.profile, CertificateOptions { optimize_delta })?)
    }
}

fn profile_with(cfg: &RunConfig, lambda: f64) -> Result<CoefficientProfile, CliError> {
    Ok(match &cfg.profile {
        ProfileSpec::PowerLaw { alpha, mu, beta_b, gamma_d } => {
            CoefficientProfile::power_law(*alpha, *mu, *beta_b, *gamma_d, lambda, cfg.beta_damp)?
        }
        ProfileSpec::Tabulated { path } => CoefficientProfile::from_csv(path, lambda, cfg.beta_damp)?,
    })
}

pub fn analyse(cfg: &RunConfig) -> Result<Analysis, CliError> {
    let base = profile_with(cfg, 0.0)?;
    let weights = feller_weight(&base)?;
    let mesh = match cfg.mesh_q {
        Some(q) => Mesh::graded(cfg.mesh_n, q)?,
        None => build_mesh(cfg.mesh_n, &base)?,
    };
    let options = AssemblyOptions { gauss_points: cfg.quadrature_points, path: MomentPath::Auto };
    // the structural hypotheses do not involve the Hardy constants
    let screen = check_hypotheses(&base, &HardyConstants::from_values(1.0, 1.0))?;
    let hardy = match best_constants(&base, &weights, &mesh, options, cfg.hardy_levels) {
        Ok(h) => Some(h.certified()),
        Err(_) if !screen.structural_ok() => None,
        Err(e) => return Err(e.into()),
    };
    let (profile, report) = match &hardy {
        Some(h) => {
            let p = base.with_lambda(cfg.lambda.resolve(h.c_hp));
            let r = check_hypotheses(&p, h)?;
            (p, r)
        }
        None => match cfg.lambda {
            crate::config::LambdaSpec::Absolute(l) => (base.with_lambda(l), screen),
            crate::config::LambdaSpec::OverHardy(_) => (base, screen),
        },
    };
    Ok(Analysis { profile, weights, mesh, options, hardy, report })
}

fn write_file(path: &Path, contents: &str) -> Result<PathBuf, CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io { path: path.display().to_string(), message: e.to_string() })?;
    Ok(path.to_path_buf())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_file(path, &text)
}

#[derive(Serialize)]
struct Refusal<'a> {
    exit_code: i32,
    error: String,
    violated: &'a [String],
}

/// Records a refusal next to the other artifacts; never a certificate.
pub fn write_refusal(out: &Path, err: &CliError) -> Result<PathBuf, CliError> {
    write_json(&out.join("refusal.json"), &Refusal { exit_code: err.exit_code(), error: err.to_string(), violated: &err.details() })
}

fn refusing<T>(out: &Path, r: Result<T, CliError>) -> Result<T, CliError> {
    if let Err(e) = &r {
        if matches!(e.exit_code(), EXIT_HYPOTHESIS | EXIT_LAMBDA) {
            write_refusal(out, e)?;
        }
    }
    r
}

#[derive(Serialize)]
struct ProfileSummary<'a> {
    kind: &'static str,
    alpha: Option<f64>,
    mu: Option<f64>,
    beta_b: Option<f64>,
    gamma_d: Option<f64>,
    tabulated_path: Option<&'a Path>,
    lambda: f64,
    beta_damp: f64,
    eta_min: f64,
    eta_max: f64,
    eta_at_1: f64,
}

fn profile_summary<'a>(cfg: &'a RunConfig, a: &Analysis) -> ProfileSummary<'a> {
    let (kind, alpha, mu, beta_b, gamma_d, tabulated_path) = match &cfg.profile {
        ProfileSpec::PowerLaw { alpha, mu, beta_b, gamma_d } => {
            ("power_law", Some(*alpha), Some(*mu), Some(*beta_b), Some(*gamma_d), None)
        }
        ProfileSpec::Tabulated { path } => ("tabulated", None, None, None, None, Some(path.as_path())),
    };
    ProfileSummary {
        kind,
        alpha,
        mu,
        beta_b,
        gamma_d,
        tabulated_path,
        lambda: a.profile.lambda,
        beta_damp: a.profile.beta_damp,
        eta_min: a.weights.eta_min,
        eta_max: a.weights.eta_max,
        eta_at_1: a.weights.eta_at_1,
    }
}

#[derive(Serialize)]
struct CheckFile<'a> {
    profile: ProfileSummary<'a>,
    report: &'a DegeneracyReport,
    hardy: Option<&'a HardyConstants>,
    hardy_samples: Option<HardySampleCheck>,
    certifiable: bool,
    refusal: Vec<String>,
}

pub fn check(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let a = analyse(cfg)?;
    let samples = match &a.hardy {
        Some(h) if cfg.hardy_samples > 0 => {
            let m = assemble_with(&a.profile, &a.weights, &a.mesh, a.options)?;
            Some(random_hardy_check(&m, h.c_hp, cfg.hardy_samples, cfg.seed, SAMPLE_TOL))
        }
        _ => None,
    };
    let verdict = a.require_certifiable();
    let (exit_code, refusal) = match &verdict {
        Ok(_) => (EXIT_OK, vec![]),
        Err(e) => (e.exit_code(), e.details()),
    };
    let file = CheckFile {
        profile: profile_summary(cfg, &a),
        report: &a.report,
        hardy: a.hardy.as_ref(),
        hardy_samples: samples,
        certifiable: verdict.is_ok(),
        refusal: refusal.clone(),
    };
    let path = write_json(&out.join("report.json"), &file)?;
    let mut summary = vec![format!("K_a = {:.6}, K_d = {:.6}, M = {:.6}", a.report.k_a, a.report.k_d, a.report.m)];
    if let Some(h) = &a.hardy {
        summary.push(format!("C_HP = {:.10}, C_HP~ = {:.10}", h.c_hp, h.c_hp_tilde));
    }
    if let Some(s) = samples {
        summary.push(format!("sampled Hardy check: {} violations in {} samples", s.violations, s.samples));
    }
    for r in &refusal {
        eprintln!("violated: {r}");
    }
    summary.push(format!("certifiable: {}", verdict.is_ok()));
    Ok(Outcome { exit_code, artifacts: vec![path], summary })
}

#[derive(Serialize)]
struct CertificateFile<'a> {
    lambda: f64,
    beta_damp: f64,
    c_hp: f64,
    c_hp_tilde: f64,
    epsilon: Option<f64>,
    one_eps: f64,
    c_lambda: f64,
    hardy: &'a HardyConstants,
    #[serde(flatten)]
    certificate: &'a DecayCertificate,
}

pub fn certify(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let a = analyse(cfg)?;
    let cert = refusing(out, a.certificate(cfg.optimize_delta))?;
    let hardy = a.hardy.as_ref().expect("certificate implies constants");
    let gauge = lambda_gauge(a.profile.lambda, hardy, a.weights.eta_min)?;
    let file = CertificateFile {
        lambda: a.profile.lambda,
        beta_damp: a.profile.beta_damp,
        c_hp: hardy.c_hp,
        c_hp_tilde: hardy.c_hp_tilde,
        epsilon: gauge.epsilon,
        one_eps: gauge.one_eps,
        c_lambda: gauge.c_lambda,
        hardy,
        certificate: &cert,
    };
    let path = write_json(&out.join("certificate.json"), &file)?;
    Ok(Outcome {
        exit_code: EXIT_OK,
        artifacts: vec![path],
        summary: vec![
            format!("C_HP = {:.10}, lambda = {:.6e}", hardy.c_hp, a.profile.lambda),
            format!("M = {:.10e} (delta = {:.6e}, delta0 = {:.6e})", cert.m_script, cert.delta, cert.delta0),
            cert.bound_formula.to_string(),
        ],
    })
}

fn initial_data(preset: InitialPreset, a: &Analysis) -> InitialData {
    match preset {
        InitialPreset::Ramp => InitialData::Ramp,
        InitialPreset::Bump => InitialData::Bump,
        InitialPreset::Still => InitialData::Still,
        InitialPreset::Compatible => InitialData::Compatible { eta_at_1: a.weights.eta_at_1, beta_damp: a.profile.beta_damp },
    }
}

fn run_trace(a: &Analysis, cfg: &RunConfig, sim: &SimulationConfig) -> Result<EnergyTrace, CliError> {
    let m = assemble_with(&a.profile, &a.weights, &a.mesh, a.options)?;
    let s0 = initial_state(&initial_data(cfg.initial, a), &a.mesh)?;
    Ok(simulate_observed(&m, a.profile.lambda, a.profile.beta_damp, &s0, sim, |_| {})?)
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let a = analyse(cfg)?;
    if a.hardy.is_none() && matches!(cfg.lambda, crate::config::LambdaSpec::OverHardy(_)) {
        return refusing(out, Err(dwave::Error::HypothesisRefused(a.report.diagnostics.clone()).into()));
    }
    let mut sim = SimulationConfig::new(cfg.dt, cfg.t_final);
    sim.stride = cfg.stride;
    let trace = run_trace(&a, cfg, &sim)?;
    let path = write_file(&out.join("trace.csv"), &trace.to_csv())?;
    let mut summary = vec![format!(
        "{} samples, E(0) = {:.10e}, E(T) = {:.10e}, dissipation residual {:.3e}",
        trace.len(),
        trace.e0(),
        trace.energy.last().copied().unwrap_or(0.0),
        dwave::dynamics::dissipation_residual(&trace)
    )];
    if !a.report.all_ok() {
        summary.push(format!("warning: hypotheses not satisfied: {}", a.report.diagnostics.join("; ")));
    }
    Ok(Outcome { exit_code: EXIT_OK, artifacts: vec![path], summary })
}

/// Horizon, run and verdict of one bound verification.
pub struct Verification {
    pub certificate: DecayCertificate,
    pub trace: EnergyTrace,
    pub verdict: dwave::certificate::DecayVerdict,
    pub fit: Option<dwave::certificate::DecayFit>,
    pub horizon: f64,
}

pub fn verify_run(a: &Analysis, cfg: &RunConfig) -> Result<Verification, CliError> {
    let certificate = a.certificate(cfg.optimize_delta)?;
    let horizon = cfg.verify_horizon.unwrap_or((3.0 * certificate.m_script).max(20.0));
    let mut sim = SimulationConfig::new(cfg.dt, horizon);
    sim.stride = cfg.stride;
    sim.max_steps = Some(cfg.verify_max_steps);
    sim.stop_below = (cfg.verify_stop_below > 0.0).then_some(cfg.verify_stop_below);
    let trace = run_trace(a, cfg, &sim)?;
    let verdict = verify_decay_bound(&trace, &certificate)?;
    let fit = fit_decay_rate(&trace, cfg.fit_t_start).ok();
    Ok(Verification { certificate, trace, verdict, fit, horizon })
}

#[derive(Serialize)]
struct VerifyFile {
    holds: bool,
    margin: Option<f64>,
    checked_samples: usize,
    first_violation: Option<f64>,
    tail_by_monotonicity: bool,
    m_script: f64,
    horizon: f64,
    t_reached: f64,
    terminated_early: bool,
    e0: f64,
    e_last: f64,
    max_step_increase: f64,
    dissipation_residual: f64,
    fitted_rate: Option<f64>,
    fit_r_squared: Option<f64>,
    fit_t_start: f64,
}

pub fn verify(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let a = analyse(cfg)?;
    let v = refusing(out, verify_run(&a, cfg))?;
    let file = VerifyFile {
        holds: v.verdict.holds,
        margin: v.verdict.margin,
        checked_samples: v.verdict.checked_samples,
        first_violation: v.verdict.first_violation,
        tail_by_monotonicity: v.verdict.tail_by_monotonicity,
        m_script: v.certificate.m_script,
        horizon: v.horizon,
        t_reached: v.trace.times.last().copied().unwrap_or(0.0),
        terminated_early: v.trace.terminated_early,
        e0: v.trace.e0(),
        e_last: v.trace.energy.last().copied().unwrap_or(0.0),
        max_step_increase: v.trace.max_step_increase,
        dissipation_residual: dwave::dynamics::dissipation_residual(&v.trace),
        fitted_rate: v.fit.map(|f| f.rate),
        fit_r_squared: v.fit.map(|f| f.r_squared),
        fit_t_start: cfg.fit_t_start,
    };
    let json = write_json(&out.join("verify.json"), &file)?;
    let csv = write_file(&out.join("trace.csv"), &v.trace.to_csv())?;
    let summary = vec![
        format!("M = {:.6e}, horizon = {:.6e}, reached t = {:.6e}", file.m_script, file.horizon, file.t_reached),
        format!(
            "bound holds: {} (margin {}, {} samples checked)",
            file.holds,
            file.margin.map_or("n/a".to_string(), |m| format!("{m:.3e}")),
            file.checked_samples
        ),
    ];
    let exit_code = if v.verdict.holds { EXIT_OK } else { EXIT_NUMERICAL };
    Ok(Outcome { exit_code, artifacts: vec![json, csv], summary })
}

/// `(N, dt)` pairs from coarsest to finest, halving both per level.
pub fn refinement_levels(n: usize, dt: f64, levels: usize) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let (mut n, mut dt) = (n, dt);
    for _ in 0..levels {
        out.push((n, dt));
        if n % 2 != 0 || n / 2 < 8 {
            break;
        }
        n /= 2;
        dt *= 2.0;
    }
    out.reverse();
    out
}

#[derive(Serialize)]
struct BoundsFile {
    certifiable: bool,
    refusal: Vec<String>,
    report: Option<dwave::diagnostics::TraceBoundReport>,
}

pub fn diagnose(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let a = analyse(cfg)?;
    let levels = refinement_levels(cfg.mesh_n, cfg.dt, cfg.diagnose_levels);
    let data = initial_data(cfg.initial, &a);
    let reports = identity_refinement(&a.profile, &a.weights, &levels, &data, cfg.diagnose_s, cfg.diagnose_t)?;
    let ids = write_json(&out.join("identities.json"), &reports)?;
    let mut summary: Vec<String> = reports
        .iter()
        .map(|r| format!("{}: residual trend {:?}", r.identity_name, r.refinement_trend))
        .collect();
    let bounds = match a.certificate(cfg.optimize_delta) {
        Ok(cert) => {
            let sim = SimulationConfig::new(cfg.dt, cfg.diagnose_t);
            let trace = run_trace(&a, cfg, &sim)?;
            let r = trace_bound_check(&trace, &cert, cfg.diagnose_s, cfg.diagnose_t, 1.0)?;
            summary.push(format!(
                "intermediate bounds hold: {} (slack {:.3e}, {:.3e})",
                r.all_hold(),
                r.boundary_trace.slack,
                r.distributed_energy.slack
            ));
            BoundsFile { certifiable: true, refusal: vec![], report: Some(r) }
        }
        Err(e) if matches!(e.exit_code(), EXIT_HYPOTHESIS | EXIT_LAMBDA) => {
            summary.push("intermediate bounds skipped: profile not certifiable".into());
            BoundsFile { certifiable: false, refusal: e.details(), report: None }
        }
        Err(e) => return Err(e),
    };
    let b = write_json(&out.join("bounds.json"), &bounds)?;
    Ok(Outcome { exit_code: EXIT_OK, artifacts: vec![ids, b], summary })
}

/// One sweep row; refusals and failures are recorded in `status`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub inv_m_script: f64,
    pub fitted_rate: f64,
    pub bound_holds: Option<bool>,
    pub status: String,
}

pub fn sweep_values(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    let spec = cfg.sweep.ok_or_else(|| CliError::Usage("sweep needs `sweep.parameter`".into()))?;
    let k = spec.count;
    Ok(match spec.range {
        SweepRange::Explicit { min, max } => {
            (0..k).map(|i| if k == 1 { min } else { min + (max - min) * i as f64 / (k - 1) as f64 }).collect()
        }
        SweepRange::Admissible => {
            let a = analyse(cfg)?;
            a.require_certifiable().or_else(|e| if e.exit_code() == EXIT_LAMBDA { Ok(a.hardy.as_ref().unwrap()) } else { Err(e) })?;
            let (lo, hi) = (a.report.lambda_lower, a.report.lambda_upper);
            // midpoints of `count` equal cells of the open interval
            (0..k).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / k as f64).collect()
        }
    })
}

fn sweep_row(cfg: &RunConfig, value: f64) -> SweepRow {
    let spec = cfg.sweep.expect("sweep configured");
    let entry = cfg.with_parameter(spec.parameter, value);
    let run = analyse(&entry).and_then(|a| verify_run(&a, &entry));
    match run {
        Ok(v) => SweepRow {
            value,
            inv_m_script: 1.0 / v.certificate.m_script,
            fitted_rate: v.fit.map_or(f64::NAN, |f| f.rate),
            bound_holds: Some(v.verdict.holds),
            status: "ok".into(),
        },
        Err(e) => SweepRow {
            value,
            inv_m_script: f64::NAN,
            fitted_rate: f64::NAN,
            bound_holds: None,
            status: format!("exit {}: {}", e.exit_code(), e).replace([',', '\n'], ";"),
        },
    }
}

pub fn sweep_rows(cfg: &RunConfig) -> Result<Vec<SweepRow>, CliError> {
    let spec = cfg.sweep.ok_or_else(|| CliError::Usage("sweep needs `sweep.parameter`".into()))?;
    if !matches!(spec.parameter, crate::config::SweepParameter::Lambda | crate::config::SweepParameter::BetaDamp)
        && matches!(cfg.profile, ProfileSpec::Tabulated { .. })
    {
        return Err(CliError::Usage(format!("`{}` cannot be swept on a tabulated profile", spec.parameter.key())));
    }
    let values = sweep_values(cfg)?;
    Ok(values.par_iter().map(|v| sweep_row(cfg, *v)).collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value,inv_m_script,fitted_rate,bound_holds,status\n");
    for r in rows {
        let holds = r.bound_holds.map_or(String::new(), |h| h.to_string());
        out += &format!("{:.16e},{:.16e},{:.16e},{},{}\n", r.value, r.inv_m_script, r.fitted_rate, holds, r.status);
    }
    out
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let rows = sweep_rows(cfg)?;
    let path = write_file(&out.join("sweep.csv"), &sweep_csv(&rows))?;
    let ok = rows.iter().filter(|r| r.status == "ok").count();
    let failed = rows.iter().filter(|r| r.bound_holds == Some(false)).count();
    Ok(Outcome {
        exit_code: EXIT_OK,
        artifacts: vec![path],
        summary: vec![format!("{} entries, {} certified, {} bound failures", rows.len(), ok, failed)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_halve_down_to_the_coarsest() {
        assert_eq!(refinement_levels(512, 5e-4, 3), vec![(128, 2e-3), (256, 1e-3), (512, 5e-4)]);
        assert_eq!(refinement_levels(16, 1e-2, 5), vec![(8, 2e-2), (16, 1e-2)]);
    }

    #[test]
    fn csv_rows_keep_seventeen_digits() {
        let rows = [SweepRow { value: 0.1, inv_m_script: 1.0 / 3.0, fitted_rate: f64::NAN, bound_holds: None, status: "x".into() }];
        let csv = sweep_csv(&rows);
        let line = csv.lines().nth(1).unwrap();
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(cols[0], "1.0000000000000001e-1");
        assert_eq!(cols[2], "NaN");
        assert_eq!(cols[3], "");
    }
}
