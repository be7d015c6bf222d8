//! Boundary-damped degenerate wave equation: weighted finite elements,
//! Hardy-Poincaré constants, energy-decay certificates and identity checks.

pub mod assembly;
pub mod certificate;
pub mod coefficients;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod quadrature;
pub mod spectral;

pub use assembly::{assemble, assemble_with, build_mesh, AssemblyOptions, Mesh, MomentPath, OperatorMatrices};
pub use certificate::{compute_certificate, fit_decay_rate, verify_decay_bound, CertificateOptions, DecayCertificate};
pub use coefficients::{check_hypotheses, feller_weight, CoefficientProfile, DegeneracyReport, WeightPair};
pub use diagnostics::{
    bt_identity_residual, identity_refinement, multiplier_residual, stream_identities, trace_bound_check, IdentityReport,
};
pub use dynamics::{energy, initial_state, simulate, simulate_observed, EnergyTrace, InitialData, SimulationConfig, State};
pub use error::{Error, Result};
pub use spectral::{best_constants, lambda_gauge, random_hardy_check, solve_steady, HardyConstants, LambdaGauge, SteadyState};
