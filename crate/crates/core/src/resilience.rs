//! Certified lower bounds on resilience.
//!
//! The disturbance box `B_∞(ε)` is covered by a grid of samples whose
//! 2-norm balls of radius `δ` cover the box. The envelope robustness is
//! evaluated at every sample, and the worst value `η*` is inflated by the
//! Lipschitz margin `L_ω·δ`. An ε is certified when `η* + L_ω·δ ≤ 0`; the
//! largest certified ε is found by bisection.

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsError, DynamicsExpr};
use crate::envelope::{self, EnvelopeError, EnvelopeFamily};
use crate::linalg::{self, GainKind, LinalgError, Matrix, TimeGrid, Vector};
use crate::stl::{self, Formula, StlError};

/// Residual above which `f(x_e)` is not treated as zero.
pub const EQUILIBRIUM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ResilienceError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("cover needs {count} samples, budget is {max_samples}; try delta >= {suggested_delta:.6}")]
    SampleBudgetExceeded {
        count: u128,
        max_samples: usize,
        suggested_delta: f64,
    },
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("f(x_e) is not zero: residual {residual:e}")]
    NotEquilibrium { residual: f64 },
    #[error("region does not contain the equilibrium")]
    RegionExcludesEquilibrium,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Cover radius in the 2-norm. `None` picks one per run.
    #[serde(default)]
    pub delta: Option<f64>,
    pub eps_hi: f64,
    #[serde(default = "default_eps_tol")]
    pub eps_tol: f64,
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
}

fn default_eps_tol() -> f64 {
    1e-4
}

fn default_max_samples() -> usize {
    100_000
}

impl ScenarioConfig {
    pub fn new(eps_hi: f64) -> Self {
        Self {
            delta: None,
            eps_hi,
            eps_tol: default_eps_tol(),
            max_samples: default_max_samples(),
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn validate(&self) -> Result<(), ResilienceError> {
        let bad = |m: &str| Err(ResilienceError::InvalidConfig(m.into()));
        if !(self.eps_hi > 0.0 && self.eps_hi.is_finite()) {
            return bad("eps_hi must be positive and finite");
        }
        if !(self.eps_tol > 0.0) {
            return bad("eps_tol must be positive");
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return bad("delta must be positive and finite");
            }
        }
        if self.max_samples == 0 {
            return bad("max_samples must be at least 1");
        }
        Ok(())
    }

    /// The configured δ, or `max(0.05·eps_hi, smallest δ whose cover of
    /// B_∞(eps_hi) fits the sample budget)`.
    pub fn resolve_delta(&self, m: usize) -> f64 {
        self.delta
            .unwrap_or_else(|| (0.05 * self.eps_hi).max(min_feasible_delta(self.eps_hi, m, self.max_samples)))
    }
}

fn min_feasible_delta(eps: f64, m: usize, max_samples: usize) -> f64 {
    let per_axis = (max_samples as f64).powf(1.0 / m.max(1) as f64).floor().max(2.0);
    // Slightly inflated so rounding in the point count cannot overflow the budget.
    eps * (m as f64).sqrt() / (per_axis - 1.0) * (1.0 + 1e-9)
}

fn points_per_axis(eps: f64, delta: f64, m: usize) -> usize {
    if eps == 0.0 {
        return 1;
    }
    let spacing = 2.0 * delta / (m as f64).sqrt();
    ((2.0 * eps / spacing - 1e-12).ceil().max(1.0) as usize) + 1
}

/// Number of cover samples without building them.
pub fn cover_count(eps: f64, delta: f64, m: usize) -> u128 {
    (points_per_axis(eps, delta, m) as u128).saturating_pow(m as u32)
}

/// Regular grid over `[-eps, eps]^m` whose δ-balls (2-norm) cover the box.
///
/// The per-axis spacing `s` satisfies `s·√m/2 ≤ δ`; both box faces are on the grid.
pub fn cover_samples(eps: f64, delta: f64, m: usize, max_samples: usize) -> Result<Vec<Vec<f64>>, ResilienceError> {
    if !(eps >= 0.0) || !(delta > 0.0) || m == 0 {
        return Err(ResilienceError::InvalidConfig(format!(
            "cover needs eps >= 0, delta > 0, m >= 1 (got {eps}, {delta}, {m})"
        )));
    }
    let count = cover_count(eps, delta, m);
    if count > max_samples as u128 {
        return Err(ResilienceError::SampleBudgetExceeded {
            count,
            max_samples,
            suggested_delta: min_feasible_delta(eps, m, max_samples),
        });
    }
    let p = points_per_axis(eps, delta, m);
    let axis: Vec<f64> = if p == 1 {
        vec![0.0]
    } else {
        (0..p).map(|i| eps * (2.0 * i as f64 / (p - 1) as f64 - 1.0)).collect()
    };
    let mut out = Vec::with_capacity(count as usize);
    let mut idx = vec![0usize; m];
    loop {
        out.push(idx.iter().map(|&i| axis[i]).collect());
        let mut d = 0;
        loop {
            if d == m {
                return Ok(out);
            }
            idx[d] += 1;
            if idx[d] < p {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// `η* = max_r −ρ(φ, ξ̄_{ω_r}, 0)`, evaluated in parallel.
pub fn scenario_eta(phi: &Formula, fam: &EnvelopeFamily, samples: &[Vec<f64>]) -> Result<f64, ResilienceError> {
    if samples.is_empty() {
        return Err(ResilienceError::InvalidConfig("no cover samples".into()));
    }
    samples
        .par_iter()
        .map(|w| {
            let sig = fam.evaluate(w)?;
            Ok(-stl::robustness(phi, &sig, 0.0)?)
        })
        .try_reduce(|| f64::NEG_INFINITY, |a, b| Ok(a.max(b)))
}

/// Strict certificate `η* + L_ω·δ ≤ 0`, with `η* = 0` never accepted.
pub fn certify(eta_star: f64, l_omega: f64, delta: f64) -> bool {
    eta_star < 0.0 && eta_star + l_omega * delta <= 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateStatus {
    /// `eps_star > 0` is certified.
    Certified,
    /// The nominal trajectory does not satisfy the formula.
    NominalViolation,
    /// The nominal satisfies the formula but no ε in the bracket certifies.
    NotCertified,
    /// The linearized bound does not exceed the linearization error `δ̄`.
    ProvisoFailed,
}

impl std::fmt::Display for CertificateStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CertificateStatus::Certified => "certified",
            CertificateStatus::NominalViolation => "nominal_violation",
            CertificateStatus::NotCertified => "not_certified",
            CertificateStatus::ProvisoFailed => "proviso_failed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub eps: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceCertificate {
    pub eps_star: f64,
    pub eta_star: f64,
    pub l_omega: f64,
    pub delta: f64,
    pub samples_used: usize,
    pub method: GainKind,
    pub trace: Vec<TraceEntry>,
    pub status: CertificateStatus,
    /// `ρ(φ, ξ₀, 0)` of the nominal trajectory.
    pub nominal_robustness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_star_linear: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_bar: Option<f64>,
}

/// `ẋ = A(x − x_e) + B_w w`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: Matrix,
    pub equilibrium: Vector,
    pub input_map: Option<Matrix>,
}

impl LinearSystem {
    pub fn new(a: Matrix) -> Self {
        let n = a.nrows();
        Self {
            a,
            equilibrium: Vector::zeros(n),
            input_map: None,
        }
    }

    pub fn with_equilibrium(mut self, x_e: Vector) -> Self {
        self.equilibrium = x_e;
        self
    }

    pub fn with_input_map(mut self, b: Option<Matrix>) -> Self {
        self.input_map = b;
        self
    }

    /// Nominal trajectory plus the envelope family for `method`.
    pub fn envelope_family(
        &self,
        x0: &Vector,
        grid: TimeGrid,
        method: GainKind,
    ) -> Result<EnvelopeFamily, ResilienceError> {
        let nominal = envelope::nominal_trajectory_about(&self.a, &self.equilibrium, x0, grid)?;
        let gain = linalg::gain_curve(&self.a, method, grid)?;
        Ok(EnvelopeFamily::new(nominal, gain, self.input_map.clone())?)
    }
}

struct Probe {
    certified: bool,
    eta: f64,
    samples: usize,
}

fn probe(
    phi: &Formula,
    fam: &EnvelopeFamily,
    eps: f64,
    delta: f64,
    l_omega: f64,
    max_samples: usize,
) -> Result<Probe, ResilienceError> {
    let samples = cover_samples(eps, delta, fam.omega_dim(), max_samples)?;
    let eta = scenario_eta(phi, fam, &samples)?;
    Ok(Probe {
        certified: certify(eta, l_omega, delta),
        eta,
        samples: samples.len(),
    })
}

/// Largest ε in `[0, eps_hi]` (to within `eps_tol`) certified by the scenario
/// program on the envelope family of `sys` around `x0`.
pub fn resilience_lower_bound(
    phi: &Formula,
    sys: &LinearSystem,
    x0: &Vector,
    grid: TimeGrid,
    method: GainKind,
    cfg: &ScenarioConfig,
) -> Result<ResilienceCertificate, ResilienceError> {
    cfg.validate()?;
    let fam = sys.envelope_family(x0, grid, method)?;
    certify_family(phi, &fam, method, cfg)
}

/// Same as [`resilience_lower_bound`] on a prebuilt envelope family.
pub fn certify_family(
    phi: &Formula,
    fam: &EnvelopeFamily,
    method: GainKind,
    cfg: &ScenarioConfig,
) -> Result<ResilienceCertificate, ResilienceError> {
    cfg.validate()?;
    if phi.dim() > fam.state_dim() {
        return Err(ResilienceError::DimensionMismatch {
            expected: fam.state_dim(),
            got: phi.dim(),
        });
    }
    let m = fam.omega_dim();
    let delta = cfg.resolve_delta(m);
    let l_omega = fam.lipschitz_omega(stl::lipschitz(phi));
    let rho0 = stl::robustness(phi, &fam.nominal, 0.0)?;

    let mut cert = ResilienceCertificate {
        eps_star: 0.0,
        eta_star: -rho0,
        l_omega,
        delta,
        samples_used: 1,
        method,
        trace: Vec::new(),
        status: CertificateStatus::NominalViolation,
        nominal_robustness: rho0,
        eps_star_linear: None,
        delta_bar: None,
    };
    if rho0 <= 0.0 {
        log::info!("nominal trajectory violates the formula (rho = {rho0:e})");
        return Ok(cert);
    }

    // Fail early rather than midway through the bisection.
    let count = cover_count(cfg.eps_hi, delta, m);
    if count > cfg.max_samples as u128 {
        return Err(ResilienceError::SampleBudgetExceeded {
            count,
            max_samples: cfg.max_samples,
            suggested_delta: min_feasible_delta(cfg.eps_hi, m, cfg.max_samples),
        });
    }

    let mut best: Option<(f64, Probe)> = None;
    let top = probe(phi, fam, cfg.eps_hi, delta, l_omega, cfg.max_samples)?;
    cert.trace.push(TraceEntry {
        eps: cfg.eps_hi,
        certified: top.certified,
    });
    if top.certified {
        best = Some((cfg.eps_hi, top));
    } else {
        let (mut lo, mut hi) = (0.0, cfg.eps_hi);
        while hi - lo > cfg.eps_tol {
            let mid = 0.5 * (lo + hi);
            let p = probe(phi, fam, mid, delta, l_omega, cfg.max_samples)?;
            cert.trace.push(TraceEntry {
                eps: mid,
                certified: p.certified,
            });
            if p.certified {
                lo = mid;
                best = Some((mid, p));
            } else {
                hi = mid;
            }
        }
    }

    match best {
        Some((eps, p)) => {
            cert.eps_star = eps;
            cert.eta_star = p.eta;
            cert.samples_used = p.samples;
            cert.status = CertificateStatus::Certified;
        }
        None => {
            let p = probe(phi, fam, 0.0, delta, l_omega, cfg.max_samples)?;
            cert.eta_star = p.eta;
            cert.samples_used = p.samples;
            cert.status = CertificateStatus::NotCertified;
        }
    }
    log::debug!(
        "eps* = {} after {} probes (delta = {delta}, L_omega = {l_omega})",
        cert.eps_star,
        cert.trace.len()
    );
    Ok(cert)
}

/// Axis-aligned box `X = Π [lo_i, hi_i]`.
pub type Region = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearCorrection {
    pub equilibrium: Vec<f64>,
    pub region: Region,
    pub hessian_bound: f64,
    pub delta_bar: f64,
}

impl NonlinearCorrection {
    /// Builds the correction for `f` on `region`. `hessian_bound` overrides
    /// the finite-difference estimate of `L_H`.
    pub fn new(
        f: &DynamicsExpr,
        equilibrium: Vec<f64>,
        region: Region,
        hessian_bound: Option<f64>,
    ) -> Result<Self, ResilienceError> {
        if equilibrium.len() != f.dim() || region.len() != f.dim() {
            return Err(ResilienceError::DimensionMismatch {
                expected: f.dim(),
                got: equilibrium.len().min(region.len()),
            });
        }
        let l_h = match hessian_bound {
            Some(v) => v,
            None => estimate_hessian_bound(f, &region, 11),
        };
        let delta_bar = delta_bar(l_h, &region, &equilibrium)?;
        Ok(Self {
            equilibrium,
            region,
            hessian_bound: l_h,
            delta_bar,
        })
    }
}

/// `½·L_H·r²` with `r` the largest 2-norm distance from `x_e` to a vertex of the region.
pub fn delta_bar(l_h: f64, region: &[(f64, f64)], x_e: &[f64]) -> Result<f64, ResilienceError> {
    if region.len() != x_e.len() {
        return Err(ResilienceError::DimensionMismatch {
            expected: x_e.len(),
            got: region.len(),
        });
    }
    let mut r2 = 0.0;
    for (&(lo, hi), &c) in region.iter().zip(x_e) {
        if !(lo <= c && c <= hi) {
            return Err(ResilienceError::RegionExcludesEquilibrium);
        }
        let far = (c - lo).max(hi - c);
        r2 += far * far;
    }
    Ok(0.5 * l_h * r2)
}

/// `max_{x ∈ grid(X)} max_i ‖∇²f_i(x)‖₂` on a regular grid with `points` per axis.
pub fn estimate_hessian_bound(f: &DynamicsExpr, region: &[(f64, f64)], points: usize) -> f64 {
    let n = region.len();
    let points = points.max(2);
    let mut idx = vec![0usize; n];
    let mut best = 0.0f64;
    let mut x = vec![0.0; n];
    loop {
        for d in 0..n {
            let (lo, hi) = region[d];
            x[d] = lo + (hi - lo) * idx[d] as f64 / (points - 1) as f64;
        }
        for i in 0..n {
            let h = f.hessian(i, &x);
            let sym = (&h + h.transpose()) * 0.5;
            let norm = SymmetricEigen::new(sym)
                .eigenvalues
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()));
            best = best.max(norm);
        }
        let mut d = 0;
        loop {
            if d == n {
                return best;
            }
            idx[d] += 1;
            if idx[d] < points {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Linearizes `f` at `x_e`, certifies the linear system and subtracts `δ̄`.
#[allow(clippy::too_many_arguments)]
pub fn nonlinear_lower_bound(
    phi: &Formula,
    f: &DynamicsExpr,
    corr: &NonlinearCorrection,
    input_map: Option<&Matrix>,
    x0: &Vector,
    grid: TimeGrid,
    method: GainKind,
    cfg: &ScenarioConfig,
) -> Result<ResilienceCertificate, ResilienceError> {
    let residual = f.eval(&corr.equilibrium).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if !(residual <= EQUILIBRIUM_TOL) {
        return Err(ResilienceError::NotEquilibrium { residual });
    }
    let a = f.jacobian(&corr.equilibrium);
    let sys = LinearSystem::new(a)
        .with_equilibrium(Vector::from_column_slice(&corr.equilibrium))
        .with_input_map(input_map.cloned());
    let mut cert = resilience_lower_bound(phi, &sys, x0, grid, method, cfg)?;
    cert.delta_bar = Some(corr.delta_bar);
    cert.eps_star_linear = Some(cert.eps_star);
    if cert.status == CertificateStatus::Certified {
        if cert.eps_star >= corr.delta_bar {
            cert.eps_star -= corr.delta_bar;
        } else {
            log::warn!(
                "linear bound {} is below the linearization error {}",
                cert.eps_star,
                corr.delta_bar
            );
            cert.eps_star = 0.0;
            cert.status = CertificateStatus::ProvisoFailed;
        }
    }
    Ok(cert)
}
