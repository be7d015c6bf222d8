//! `dwave` command-line driver: configuration, subcommands and exit codes.

pub mod commands;
pub mod config;

use clap::{Parser, Subcommand};
use config::{ConfigError, RawConfig, RunConfig};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_LAMBDA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Output directory used when neither `--out` nor `output.dir` is given.
pub const OUT_ENV: &str = "DWAVE_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] dwave::Error),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use dwave::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                E::HypothesisRefused(_) | E::Integrability(_) | E::InvalidCoefficient(_) => EXIT_HYPOTHESIS,
                E::InadmissibleLambda(_) => EXIT_LAMBDA,
                E::InvalidParameter(_) | E::InvalidInitialData(_) | E::UnsupportedProfile(_) | E::Io { .. } => EXIT_USAGE,
                E::Assembly { .. }
                | E::Spectral(_)
                | E::Convergence { .. }
                | E::Solver(_)
                | E::InsufficientHorizon { .. }
                | E::Fit(_) => EXIT_NUMERICAL,
            },
        }
    }

    /// One line per violated inequality for refusals, the message otherwise.
    pub fn details(&self) -> Vec<String> {
        match self {
            CliError::Core(dwave::Error::HypothesisRefused(why)) => why.clone(),
            other => vec![other.to_string()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Degeneracy report and Hardy constants (report.json)
    Check,
    /// Decay certificate (certificate.json)
    Certify,
    /// Energy trace on [0, time.t_final] (trace.csv)
    Simulate,
    /// Checks the certified bound on a simulated trace (verify.json, trace.csv)
    Verify,
    /// Multiplier identities under refinement and the intermediate bounds (identities.json, bounds.json)
    Diagnose,
    /// Parameter sweep (sweep.csv)
    Sweep,
}

#[derive(Debug, Parser)]
#[command(name = "dwave", version, about = "Decay certificates for a boundary-damped degenerate wave equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file (`key = value`, `[section]`, `#` comments)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (falls back to `output.dir`, then $DWAVE_OUT, then ./dwave-out)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replace one configuration entry; repeatable
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

/// What a subcommand produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    pub summary: Vec<String>,
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut raw = match path {
        Some(p) => RawConfig::from_file(p)?,
        None => RawConfig::default(),
    };
    for o in overrides {
        raw.apply_override(o)?;
    }
    Ok(RunConfig::from_raw(&raw)?)
}

pub fn output_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("dwave-out"))
}

pub fn execute(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io { path: out.display().to_string(), message: e.to_string() })?;
    match cmd {
        Command::Check => commands::check(cfg, out),
        Command::Certify => commands::certify(cfg, out),
        Command::Simulate => commands::simulate(cfg, out),
        Command::Verify => commands::verify(cfg, out),
        Command::Diagnose => commands::diagnose(cfg, out),
        Command::Sweep => commands::sweep(cfg, out),
    }
}

/// Runs a parsed command line, printing to stdout/stderr, and returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = load_config(cli.config.as_deref(), &cli.overrides).and_then(|cfg| {
        let out = output_dir(cli.out.as_deref(), &cfg);
        execute(cli.command, &cfg, &out)
    });
    match result {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for a in &outcome.artifacts {
                println!("wrote {}", a.display());
            }
            outcome.exit_code
        }
        Err(e) => {
            let code = e.exit_code();
            match &e {
                CliError::Core(dwave::Error::HypothesisRefused(_)) => {
                    eprintln!("error: hypotheses refused");
                    for d in e.details() {
                        eprintln!("  violated: {d}");
                    }
                }
                _ => eprintln!("error: {e}"),
            }
            code
        }
    }
}
