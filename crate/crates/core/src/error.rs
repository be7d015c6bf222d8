use thiserror::Error;

/// Everything that can go wrong between reading a profile and emitting a certificate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),

    #[error("integrability failure: {0}")]
    Integrability(String),

    #[error("assembly failed on element {element} [{x_left}, {x_right}]: {what}")]
    Assembly {
        element: usize,
        x_left: f64,
        x_right: f64,
        what: String,
    },

    #[error("spectral failure: {0}")]
    Spectral(String),

    #[error("inverse iteration did not converge after {iterations} steps (last relative change {last_change:e})")]
    Convergence { iterations: usize, last_change: f64 },

    #[error("inadmissible lambda: {0}")]
    InadmissibleLambda(String),

    #[error("hypotheses refused: {}", .0.join("; "))]
    HypothesisRefused(Vec<String>),

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("invalid initial data: {0}")]
    InvalidInitialData(String),

    #[error("insufficient horizon: trace ends at t = {available}, need t >= {required}")]
    InsufficientHorizon { required: f64, available: f64 },

    #[error("decay-rate fit failed: {0}")]
    Fit(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported profile: {0}")]
    UnsupportedProfile(String),

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
