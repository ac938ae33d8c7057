//! Certified resilience bounds for signal temporal logic specifications on
//! disturbed linear and nonlinear systems.
//!
//! The pipeline: decompose `A` ([`linalg`]), build gain curves and the
//! envelope family around the nominal trajectory ([`envelope`]), evaluate
//! robustness ([`stl`]) over a δ-cover of the disturbance box and bisect on
//! the disturbance size ([`resilience`]). [`dynamics`] integrates the true
//! system for Monte-Carlo cross-checks.

// `!(x > 0.0)` style checks are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod envelope;
pub mod linalg;
pub mod resilience;
pub mod stl;

pub use dynamics::{
    integrate, monte_carlo_validate, parse_dynamics, DisturbanceKind, DisturbanceSignal, Dynamics, DynamicsError,
    DynamicsExpr, System, ViolationReport,
};
pub use envelope::{EnvelopeError, EnvelopeFamily};
pub use linalg::{
    decompose, gain_curve, GainCurve, GainKind, LinalgError, Matrix, SpectralDecomposition, TimeGrid, Vector,
};
pub use resilience::{
    certify, cover_samples, nonlinear_lower_bound, resilience_lower_bound, scenario_eta, CertificateStatus,
    LinearSystem, NonlinearCorrection, ResilienceCertificate, ResilienceError, ScenarioConfig,
};
pub use stl::{robustness, Formula, Signal, StlError};
