//! The work behind each subcommand, independent of argument parsing.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use resilience_core::dynamics::{
    self, integrate, trial_disturbance, DisturbanceSignal, DynamicsError, ViolationReport,
};
use resilience_core::envelope::{self, EnvelopeError};
use resilience_core::linalg::GainKind;
use resilience_core::resilience::{
    nonlinear_lower_bound, resilience_lower_bound, CertificateStatus, ResilienceCertificate, ResilienceError,
};
use resilience_core::stl::{self, Formula, Signal, StlError};
use thiserror::Error;

use crate::config::{ConfigError, Model, Problem};
use crate::svg::{self, Curve, Panel};

pub const CERTIFICATE_FILE: &str = "certificate.json";
pub const REPORT_FILE: &str = "report.json";
pub const OVERLAY_FILE: &str = "validate.svg";
/// The overlay plots at most this many trajectories (the first trials).
pub const OVERLAY_MAX_TRAJECTORIES: usize = 100;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const ERROR: u8 = 1;
    /// Nominal violation (analyze), UNSAT (robustness) or violations found (validate).
    pub const VIOLATION: u8 = 2;
    pub const PROVISO_FAILED: u8 = 3;
    pub const NOT_CERTIFIED: u8 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Resilience(#[from] ResilienceError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error("no certificate at {0}; run `analyze` first or pass --eps")]
    MissingCertificate(PathBuf),
    #[error("method `all` is only meaningful for `bounds`")]
    MethodAll,
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("malformed certificate {path}: {source}")]
    Certificate { path: PathBuf, source: serde_json::Error },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(io_err(format!("writing {}", path.display())))
}

pub fn exit_code(status: CertificateStatus) -> u8 {
    match status {
        CertificateStatus::Certified => exit::OK,
        CertificateStatus::NominalViolation => exit::VIOLATION,
        CertificateStatus::ProvisoFailed => exit::PROVISO_FAILED,
        CertificateStatus::NotCertified => exit::NOT_CERTIFIED,
    }
}

/// Runs the linear or nonlinear certificate for `problem`.
pub fn analyze(problem: &Problem, method: GainKind) -> Result<ResilienceCertificate, CliError> {
    let cfg = &problem.config.scenario;
    let cert = match &problem.model {
        Model::Linear(sys) => resilience_lower_bound(&problem.phi, sys, &problem.x0, problem.grid, method, cfg)?,
        Model::Nonlinear { f, correction, .. } => nonlinear_lower_bound(
            &problem.phi,
            f,
            correction,
            problem.input_map.as_ref(),
            &problem.x0,
            problem.grid,
            method,
            cfg,
        )?,
    };
    Ok(cert)
}

pub fn summary(cert: &ResilienceCertificate) -> String {
    let mut s = format!(
        "status    {}\neps*      {:.6e}\neta*      {:.6e}\nL_omega   {:.6e}\ndelta     {:.6e}\nsamples   {}\nmethod    {}\nrho_0     {:.6e}\n",
        cert.status,
        cert.eps_star,
        cert.eta_star,
        cert.l_omega,
        cert.delta,
        cert.samples_used,
        cert.method,
        cert.nominal_robustness,
    );
    if let (Some(lin), Some(db)) = (cert.eps_star_linear, cert.delta_bar) {
        s.push_str(&format!("eps*_lin  {lin:.6e}\ndelta_bar {db:.6e}\n"));
    }
    s
}

pub fn write_certificate(out: &Path, cert: &ResilienceCertificate) -> Result<PathBuf, CliError> {
    let path = out.join(CERTIFICATE_FILE);
    let json = serde_json::to_string_pretty(cert).expect("certificate serializes");
    write_file(&path, json.as_bytes())?;
    Ok(path)
}

pub fn read_certificate(out: &Path) -> Result<ResilienceCertificate, CliError> {
    let path = out.join(CERTIFICATE_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(CliError::MissingCertificate(path)),
        Err(e) => return Err(io_err(format!("reading {}", path.display()))(e)),
    };
    serde_json::from_str(&text).map_err(|source| CliError::Certificate { path, source })
}

/// Nominal trajectory and the envelope bracket `ξ₀ ∓ A(t)|B_w|ε𝟙` for one method.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub method: GainKind,
    pub eps: f64,
    pub lo: Signal,
    pub nominal: Signal,
    pub hi: Signal,
}

pub fn bounds(problem: &Problem, methods: &[GainKind], eps: f64) -> Result<Vec<Bounds>, CliError> {
    methods
        .iter()
        .map(|&method| {
            let fam = problem
                .linear_system()
                .envelope_family(&problem.x0, problem.grid, method)?;
            let (lo, hi) = fam.bracket(eps)?;
            Ok(Bounds {
                method,
                eps,
                lo,
                nominal: fam.nominal.clone(),
                hi,
            })
        })
        .collect()
}

/// CSV with columns `t,lo_1,nominal_1,hi_1,...`.
pub fn write_bounds_csv<W: Write>(b: &Bounds, mut w: W) -> std::io::Result<()> {
    let n = b.nominal.dim();
    let mut header = String::from("t");
    for i in 1..=n {
        header.push_str(&format!(",lo_{i},nominal_{i},hi_{i}"));
    }
    writeln!(w, "{header}")?;
    for k in 0..b.nominal.len() {
        write!(w, "{:.16e}", b.nominal.time(k))?;
        for i in 0..n {
            write!(
                w,
                ",{:.16e},{:.16e},{:.16e}",
                b.lo.sample(k)[i],
                b.nominal.sample(k)[i],
                b.hi.sample(k)[i]
            )?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn method_color(m: GainKind) -> &'static str {
    match m {
        GainKind::Jordan => "#1f77b4",
        GainKind::Absolute => "#d62728",
        GainKind::Gronwall => "#2ca02c",
    }
}

fn coordinate(sig: &Signal, i: usize) -> Vec<(f64, f64)> {
    (0..sig.len()).map(|k| (sig.time(k), sig.sample(k)[i])).collect()
}

pub fn bounds_svg(all: &[Bounds]) -> String {
    let Some(first) = all.first() else {
        return svg::render("bounds", &[]);
    };
    let panels: Vec<Panel> = (0..first.nominal.dim())
        .map(|i| {
            let mut curves = Vec::new();
            for b in all {
                let c = method_color(b.method);
                curves.push(Curve::new(coordinate(&b.lo, i), c));
                curves.push(Curve::new(coordinate(&b.hi, i), c));
            }
            curves.push(Curve::new(coordinate(&first.nominal, i), "black"));
            let methods: Vec<String> = all
                .iter()
                .map(|b| format!("{} ({})", b.method, method_color(b.method)))
                .collect();
            Panel {
                title: format!("x{}: nominal and envelope, {}", i + 1, methods.join(", ")),
                curves,
                levels: Vec::new(),
            }
        })
        .collect();
    svg::render(&format!("Trajectory bounds, eps = {}", first.eps), &panels)
}

/// Monte-Carlo validation at `eps` on the true dynamics.
pub fn validate(problem: &Problem, eps: f64, trials: usize, seed: u64) -> Result<ViolationReport, CliError> {
    Ok(dynamics::monte_carlo_validate(
        &problem.simulation_system(),
        &problem.phi,
        problem.x0.as_slice(),
        eps,
        trials,
        seed,
        problem.grid,
    )?)
}

/// Thresholds `x_i = c` of the single-coordinate predicates in `phi`.
fn levels(phi: &Formula, out: &mut Vec<(usize, f64)>) {
    match phi {
        Formula::True => {}
        Formula::Predicate(p) => {
            let nz: Vec<usize> = (0..p.coeffs.len()).filter(|&i| p.coeffs[i] != 0.0).collect();
            if let [i] = nz[..] {
                let v = p.rhs / p.coeffs[i];
                if !out.contains(&(i, v)) {
                    out.push((i, v));
                }
            }
        }
        Formula::Not { arg } | Formula::Always { arg, .. } | Formula::Eventually { arg, .. } => levels(arg, out),
        Formula::And { args } | Formula::Or { args } => args.iter().for_each(|a| levels(a, out)),
    }
}

/// Overlay of the first validation trajectories with the formula thresholds.
pub fn validate_overlay(problem: &Problem, eps: f64, trials: usize, seed: u64) -> Result<String, CliError> {
    let sys = problem.simulation_system();
    let m = sys.omega_dim();
    let hold = 10.0 * problem.grid.dt;
    let x0 = problem.x0.as_slice();
    let runs: Vec<Signal> = (0..trials.clamp(1, OVERLAY_MAX_TRAJECTORIES))
        .into_par_iter()
        .map(|j| integrate(&sys, x0, &trial_disturbance(j, seed, eps, hold, m), problem.grid))
        .collect::<Result<_, _>>()?;
    let nominal = integrate(&sys, x0, &DisturbanceSignal::zero(m), problem.grid)?;
    let mut lv = Vec::new();
    levels(&problem.phi, &mut lv);
    let panels: Vec<Panel> = (0..problem.state_dim())
        .map(|i| {
            let mut curves: Vec<Curve> = runs
                .iter()
                .map(|r| Curve::new(coordinate(r, i), "#1f77b4").thin(0.5, 0.15))
                .collect();
            curves.push(Curve::new(coordinate(&nominal, i), "black"));
            Panel {
                title: format!("x{}", i + 1),
                curves,
                levels: lv
                    .iter()
                    .filter(|(j, _)| *j == i)
                    .map(|(_, v)| (*v, "#d62728".to_string()))
                    .collect(),
            }
        })
        .collect();
    Ok(svg::render(
        &format!("{} disturbed trajectories, eps = {eps}", runs.len()),
        &panels,
    ))
}

pub fn write_report(out: &Path, report: &ViolationReport) -> Result<PathBuf, CliError> {
    let path = out.join(REPORT_FILE);
    write_file(
        &path,
        serde_json::to_string_pretty(report)
            .expect("report serializes")
            .as_bytes(),
    )?;
    Ok(path)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_file(path, text.as_bytes())
}

/// Robustness at `t = 0` of a signal read from CSV (`t,x1,...,xn`).
pub fn robustness_of_csv<R: Read>(problem: &Problem, r: R) -> Result<f64, CliError> {
    let sig = envelope::read_signal_csv(r)?;
    if sig.dim() != problem.state_dim() {
        return Err(StlError::DimensionMismatch {
            expected: problem.state_dim(),
            got: sig.dim(),
        }
        .into());
    }
    Ok(stl::robustness(&problem.phi, &sig, sig.t0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AnalysisConfig;

    fn scalar() -> Problem {
        let cfg = AnalysisConfig::from_json(
            r#"{
            "system": {"type": "linear", "a": [[-1.0]]},
            "x0": [1.0],
            "spec": "G[0,10](x1 <= 2)",
            "horizon": {"t_end": 10.0, "dt": 0.01},
            "scenario": {"delta": 0.01, "eps_hi": 4.0}
        }"#,
        )
        .unwrap();
        Problem::from_config(cfg).unwrap()
    }

    #[test]
    fn scalar_bounds_order_and_start() {
        let p = scalar();
        let b = bounds(&p, &[GainKind::Jordan, GainKind::Absolute], 1.0).unwrap();
        for k in 0..p.grid.len {
            let (j, a) = (&b[0], &b[1]);
            if k == 0 {
                assert_eq!(j.lo.sample(0), j.hi.sample(0));
                assert_eq!(a.lo.sample(0), j.nominal.sample(0));
            } else {
                assert!(a.hi.sample(k)[0] > j.hi.sample(k)[0]);
            }
        }
        let mut csv = Vec::new();
        write_bounds_csv(&b[0], &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,lo_1,nominal_1,hi_1\n"));
        assert_eq!(text.lines().count(), p.grid.len + 1);
        let svg = bounds_svg(&b);
        assert_eq!(svg.matches("<polyline").count(), 5);
    }

    #[test]
    fn missing_certificate_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_certificate(dir.path()),
            Err(CliError::MissingCertificate(_))
        ));
    }

    #[test]
    fn certificate_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = resilience_core::ScenarioConfig {
            eps_tol: 1e-2,
            ..scalar().config.scenario
        };
        let mut p = scalar();
        p.config.scenario = cfg;
        let cert = analyze(&p, GainKind::Jordan).unwrap();
        write_certificate(dir.path(), &cert).unwrap();
        assert_eq!(read_certificate(dir.path()).unwrap(), cert);
        assert!(summary(&cert).contains("certified"));
        assert_eq!(exit_code(cert.status), exit::OK);
    }

    #[test]
    fn threshold_levels_are_collected() {
        let phi = stl::parse("G[0,1](x1 <= 2 && -x1 <= 0 && x1 + x2 <= 1)").unwrap();
        let mut lv = Vec::new();
        levels(&phi, &mut lv);
        assert_eq!(lv, vec![(0, 2.0), (0, -0.0)]);
    }
}
