//! Run configuration: a flat `key = value` file with optional `[section]`
//! headers, `#` comments and repeatable `--override key=value` on top.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("{0}")]
    Conflict(String),
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "a.alpha",
    "b.mu",
    "b.beta",
    "d.gamma",
    "tabulated.path",
    "lambda",
    "beta_damp",
    "mesh.n",
    "mesh.q",
    "quadrature.points",
    "hardy.levels",
    "hardy.samples",
    "time.dt",
    "time.t_final",
    "time.stride",
    "initial.preset",
    "sweep.parameter",
    "sweep.min",
    "sweep.max",
    "sweep.count",
    "sweep.range",
    "output.dir",
    "seed",
    "certificate.optimize_delta",
    "diagnose.s",
    "diagnose.t",
    "diagnose.levels",
    "fit.t_start",
    "verify.horizon",
    "verify.max_steps",
    "verify.stop_below",
];

/// Parsed but untyped entries, keyed by full dotted name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

fn strip_comment(line: &str) -> &str {
    // `#` starts a comment at the beginning of a line or after whitespace
    let bytes = line.as_bytes();
    for (i, b) in bytes.iter().enumerate() {
        if *b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && !name.ends_with('.')
        && !name.contains("..")
        && name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '.')
}

fn unquote(v: &str) -> &str {
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RawConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                let name = inner.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line: line_no,
                    message: format!("unterminated section header `{line}`"),
                })?;
                let name = name.trim();
                if !name.is_empty() && !valid_name(name) {
                    return Err(ConfigError::Syntax { line: line_no, message: format!("bad section name `{name}`") });
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let k = k.trim();
            if !valid_name(k) {
                return Err(ConfigError::Syntax { line: line_no, message: format!("bad key `{k}`") });
            }
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey(key));
            }
            let value = unquote(v.trim()).to_string();
            if cfg.entries.insert(key.clone(), value).is_some() {
                return Err(ConfigError::Syntax { line: line_no, message: format!("duplicate key `{key}`") });
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, crate::CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self::parse(&text)?)
    }

    /// Applies `key=value`, replacing any existing entry.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (k, v) = spec.split_once('=').ok_or_else(|| ConfigError::Value {
            key: spec.to_string(),
            message: "override must look like key=value".into(),
        })?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
        self.entries.insert(k.to_string(), unquote(v.trim()).to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn num(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => parse_finite(key, s),
        }
    }

    fn opt_num(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(key).map(|s| parse_finite(key, s)).transpose()
    }

    fn count(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s.parse::<usize>().map_err(|e| ConfigError::Value { key: key.into(), message: e.to_string() }),
        }
    }

    fn flag(&self, key: &str) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(false),
            Some("true") | Some("yes") | Some("1") => Ok(true),
            Some("false") | Some("no") | Some("0") => Ok(false),
            Some(other) => Err(ConfigError::Value { key: key.into(), message: format!("expected true/false, got `{other}`") }),
        }
    }
}

fn parse_finite(key: &str, s: &str) -> Result<f64, ConfigError> {
    let v: f64 = s.parse().map_err(|e| ConfigError::Value { key: key.into(), message: format!("`{s}`: {e}") })?;
    if !v.is_finite() {
        return Err(ConfigError::Value { key: key.into(), message: format!("`{s}` is not finite") });
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSpec {
    PowerLaw { alpha: f64, mu: f64, beta_b: f64, gamma_d: f64 },
    Tabulated { path: PathBuf },
}

/// `lambda = 0.3` or `lambda = 0.05/C_HP` (a multiple of the reciprocal Hardy constant).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSpec {
    Absolute(f64),
    OverHardy(f64),
}

impl LambdaSpec {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        let err = |m: String| ConfigError::Value { key: "lambda".into(), message: m };
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if let Some(num) = compact.strip_suffix("/C_HP") {
            let v: f64 = num.parse().map_err(|e| err(format!("`{s}`: {e}")))?;
            if !v.is_finite() {
                return Err(err(format!("`{s}` is not finite")));
            }
            return Ok(LambdaSpec::OverHardy(v));
        }
        Ok(LambdaSpec::Absolute(parse_finite("lambda", &compact)?))
    }

    pub fn resolve(&self, c_hp: f64) -> f64 {
        match self {
            LambdaSpec::Absolute(v) => *v,
            LambdaSpec::OverHardy(k) => k / c_hp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialPreset {
    Ramp,
    Bump,
    Still,
    Compatible,
}

impl InitialPreset {
    fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "ramp" => Ok(Self::Ramp),
            "bump" => Ok(Self::Bump),
            "still" => Ok(Self::Still),
            "compatible" => Ok(Self::Compatible),
            other => Err(ConfigError::Value {
                key: "initial.preset".into(),
                message: format!("`{other}` is not one of ramp, bump, still, compatible"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Lambda,
    BetaDamp,
    Alpha,
    Mu,
    Gamma,
}

impl SweepParameter {
    fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "beta_damp" => Ok(Self::BetaDamp),
            "a.alpha" => Ok(Self::Alpha),
            "b.mu" => Ok(Self::Mu),
            "d.gamma" => Ok(Self::Gamma),
            other => Err(ConfigError::Value {
                key: "sweep.parameter".into(),
                message: format!("`{other}` is not one of lambda, beta_damp, a.alpha, b.mu, d.gamma"),
            }),
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            Self::Lambda => "lambda",
            Self::BetaDamp => "beta_damp",
            Self::Alpha => "a.alpha",
            Self::Mu => "b.mu",
            Self::Gamma => "d.gamma",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepRange {
    Explicit { min: f64, max: f64 },
    /// The open admissible lambda interval of the profile.
    Admissible,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub range: SweepRange,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: ProfileSpec,
    pub lambda: LambdaSpec,
    pub beta_damp: f64,
    pub mesh_n: usize,
    pub mesh_q: Option<f64>,
    pub quadrature_points: usize,
    pub hardy_levels: usize,
    pub hardy_samples: usize,
    pub dt: f64,
    pub t_final: f64,
    pub stride: usize,
    pub initial: InitialPreset,
    pub sweep: Option<SweepSpec>,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub optimize_delta: bool,
    pub diagnose_s: f64,
    pub diagnose_t: f64,
    pub diagnose_levels: usize,
    pub fit_t_start: f64,
    pub verify_horizon: Option<f64>,
    pub verify_max_steps: usize,
    pub verify_stop_below: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_raw(&RawConfig::default()).expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let power_keys = ["a.alpha", "b.mu", "b.beta", "d.gamma"];
        let profile = match raw.get("tabulated.path") {
            Some(path) => {
                if let Some(k) = power_keys.iter().find(|k| raw.get(k).is_some()) {
                    return Err(ConfigError::Conflict(format!("`tabulated.path` cannot be combined with `{k}`")));
                }
                ProfileSpec::Tabulated { path: PathBuf::from(path) }
            }
            None => ProfileSpec::PowerLaw {
                alpha: raw.num("a.alpha", 0.5)?,
                mu: raw.num("b.mu", 0.1)?,
                beta_b: raw.num("b.beta", 1.0)?,
                gamma_d: raw.num("d.gamma", 0.25)?,
            },
        };
        let lambda = LambdaSpec::parse(raw.get("lambda").unwrap_or("0.05/C_HP"))?;
        let positive = |key: &str, v: f64| {
            if v > 0.0 {
                Ok(v)
            } else {
                Err(ConfigError::Value { key: key.into(), message: format!("{v} must be positive") })
            }
        };
        let at_least = |key: &str, v: usize, min: usize| {
            if v >= min {
                Ok(v)
            } else {
                Err(ConfigError::Value { key: key.into(), message: format!("{v} must be at least {min}") })
            }
        };
        let t_final = raw.num("time.t_final", 20.0)?;
        if t_final < 0.0 {
            return Err(ConfigError::Value { key: "time.t_final".into(), message: format!("{t_final} must be >= 0") });
        }
        let sweep = match raw.get("sweep.parameter") {
            None => None,
            Some(p) => {
                let parameter = SweepParameter::parse(p)?;
                let range = match raw.get("sweep.range") {
                    Some("admissible") => {
                        if parameter != SweepParameter::Lambda {
                            return Err(ConfigError::Conflict("`sweep.range = admissible` needs `sweep.parameter = lambda`".into()));
                        }
                        SweepRange::Admissible
                    }
                    Some(other) => {
                        return Err(ConfigError::Value { key: "sweep.range".into(), message: format!("`{other}` (only `admissible`)") })
                    }
                    None => {
                        let (min, max) = (raw.opt_num("sweep.min")?, raw.opt_num("sweep.max")?);
                        match (min, max) {
                            (Some(min), Some(max)) if min <= max => SweepRange::Explicit { min, max },
                            (Some(_), Some(_)) => return Err(ConfigError::Conflict("`sweep.min` exceeds `sweep.max`".into())),
                            _ => return Err(ConfigError::Conflict("sweep needs `sweep.min` and `sweep.max` or `sweep.range`".into())),
                        }
                    }
                };
                Some(SweepSpec { parameter, range, count: at_least("sweep.count", raw.count("sweep.count", 16)?, 1)? })
            }
        };
        let seed = match raw.get("seed") {
            None => 0,
            Some(s) => s.parse::<u64>().map_err(|e| ConfigError::Value { key: "seed".into(), message: e.to_string() })?,
        };
        let diagnose_s = raw.num("diagnose.s", 1.0)?;
        let diagnose_t = raw.num("diagnose.t", 10.0)?;
        if !(diagnose_t > diagnose_s && diagnose_s >= 0.0) {
            return Err(ConfigError::Conflict(format!("need diagnose.t > diagnose.s >= 0, got {diagnose_s}, {diagnose_t}")));
        }
        Ok(RunConfig {
            profile,
            lambda,
            beta_damp: raw.num("beta_damp", 1.0)?,
            mesh_n: at_least("mesh.n", raw.count("mesh.n", 256)?, 8)?,
            mesh_q: raw.opt_num("mesh.q")?.map(|q| positive("mesh.q", q)).transpose()?,
            quadrature_points: at_least("quadrature.points", raw.count("quadrature.points", 4)?, 1)?,
            hardy_levels: at_least("hardy.levels", raw.count("hardy.levels", 3)?, 1)?,
            hardy_samples: raw.count("hardy.samples", 1000)?,
            dt: positive("time.dt", raw.num("time.dt", 1e-3)?)?,
            t_final,
            stride: at_least("time.stride", raw.count("time.stride", 1)?, 1)?,
            initial: InitialPreset::parse(raw.get("initial.preset").unwrap_or("ramp"))?,
            sweep,
            output_dir: raw.get("output.dir").map(PathBuf::from),
            seed,
            optimize_delta: raw.flag("certificate.optimize_delta")?,
            diagnose_s,
            diagnose_t,
            diagnose_levels: at_least("diagnose.levels", raw.count("diagnose.levels", 3)?, 1)?,
            fit_t_start: raw.num("fit.t_start", 5.0)?,
            verify_horizon: raw.opt_num("verify.horizon")?.map(|h| positive("verify.horizon", h)).transpose()?,
            verify_max_steps: at_least("verify.max_steps", raw.count("verify.max_steps", 200_000)?, 1)?,
            verify_stop_below: raw.num("verify.stop_below", 1e-200)?,
        })
    }

    /// Copy with one sweep parameter replaced.
    pub fn with_parameter(&self, p: SweepParameter, value: f64) -> Self {
        let mut out = self.clone();
        match p {
            SweepParameter::Lambda => out.lambda = LambdaSpec::Absolute(value),
            SweepParameter::BetaDamp => out.beta_damp = value,
            SweepParameter::Alpha | SweepParameter::Mu | SweepParameter::Gamma => {
                if let ProfileSpec::PowerLaw { alpha, mu, gamma_d, .. } = &mut out.profile {
                    match p {
                        SweepParameter::Alpha => *alpha = value,
                        SweepParameter::Mu => *mu = value,
                        _ => *gamma_d = value,
                    }
                }
            }
        }
        out
    }
}
