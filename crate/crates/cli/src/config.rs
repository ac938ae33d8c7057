//! Analysis configuration files (JSON) and their validation.

use std::fs;
use std::path::{Path, PathBuf};

use resilience_core::dynamics::{parse_dynamics, DynamicsExpr, System};
use resilience_core::linalg::{GainKind, Matrix, TimeGrid, Vector};
use resilience_core::resilience::{LinearSystem, NonlinearCorrection, ScenarioConfig};
use resilience_core::stl::{self, Formula};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("at `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, message: impl std::fmt::Display) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            message: message.to_string(),
        }
    }

    /// Dotted path of the offending field.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Io { .. } => None,
            ConfigError::Parse { field, .. } | ConfigError::Invalid { field, .. } => Some(field),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub system: SystemConfig,
    pub x0: Vec<f64>,
    /// Disturbance channel `B_w` (`n×m`); identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_map: Option<Vec<Vec<f64>>>,
    pub spec: String,
    pub horizon: HorizonConfig,
    pub scenario: ScenarioConfig,
    #[serde(default = "default_method")]
    pub method: GainKind,
    #[serde(default)]
    pub validate: ValidateConfig,
}

fn default_method() -> GainKind {
    GainKind::Jordan
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SystemConfig {
    /// `ẋ = A(x − x_e) + B_w w`.
    Linear {
        a: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        equilibrium: Option<Vec<f64>>,
    },
    /// `ẋ = f(x) + B_w w`, linearized at `equilibrium`; `region` bounds the
    /// states used for the linearization error.
    Nonlinear {
        f: Vec<String>,
        equilibrium: Vec<f64>,
        region: Vec<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hessian_bound: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub t_end: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_trials() -> usize {
    1000
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            seed: 0,
        }
    }
}

impl AnalysisConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::Parse {
                field,
                message: e.into_inner().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn state_dim(&self) -> usize {
        match &self.system {
            SystemConfig::Linear { a, .. } => a.len(),
            SystemConfig::Nonlinear { f, .. } => f.len(),
        }
    }
}

/// A validated configuration with parsed formula, matrices and grid.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: AnalysisConfig,
    pub phi: Formula,
    pub grid: TimeGrid,
    pub x0: Vector,
    pub input_map: Option<Matrix>,
    pub model: Model,
}

#[derive(Debug, Clone)]
pub enum Model {
    Linear(LinearSystem),
    Nonlinear {
        f: DynamicsExpr,
        correction: NonlinearCorrection,
        /// Jacobian at the equilibrium, used for envelopes and certificates.
        linearized: LinearSystem,
    },
}

fn matrix(field: &str, rows: &[Vec<f64>], nrows: usize, ncols: Option<usize>) -> Result<Matrix, ConfigError> {
    if rows.len() != nrows {
        return Err(ConfigError::invalid(
            field,
            format!("expected {nrows} rows, got {}", rows.len()),
        ));
    }
    let ncols = ncols.unwrap_or_else(|| rows.first().map_or(0, Vec::len));
    if ncols == 0 {
        return Err(ConfigError::invalid(field, "empty matrix"));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(ConfigError::invalid(
                format!("{field}[{i}]"),
                format!("expected {ncols} columns, got {}", r.len()),
            ));
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(ConfigError::invalid(format!("{field}[{i}][{j}]"), "not finite"));
        }
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn vector(field: &str, v: &[f64], n: usize) -> Result<Vector, ConfigError> {
    if v.len() != n {
        return Err(ConfigError::invalid(
            field,
            format!("expected {n} entries, got {}", v.len()),
        ));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(ConfigError::invalid(format!("{field}[{i}]"), "not finite"));
    }
    Ok(Vector::from_column_slice(v))
}

impl Problem {
    pub fn from_config(config: AnalysisConfig) -> Result<Self, ConfigError> {
        let n = config.state_dim();
        if n == 0 {
            return Err(ConfigError::invalid("system", "zero-dimensional system"));
        }
        let x0 = vector("x0", &config.x0, n)?;
        let input_map = config
            .input_map
            .as_deref()
            .map(|rows| matrix("input_map", rows, n, None))
            .transpose()?;

        let h = config.horizon;
        if !(h.dt > 0.0 && h.dt.is_finite()) {
            return Err(ConfigError::invalid("horizon.dt", "must be positive"));
        }
        let phi = stl::parse_with_dim(&config.spec, n).map_err(|e| ConfigError::invalid("spec", e))?;
        if !(h.t_end >= phi.horizon() - 1e-9 * h.dt) {
            return Err(ConfigError::invalid(
                "horizon.t_end",
                format!("{} is shorter than the formula horizon {}", h.t_end, phi.horizon()),
            ));
        }
        let grid = TimeGrid::spanning(h.t_end, h.dt).map_err(|e| ConfigError::invalid("horizon", e))?;
        config
            .scenario
            .validate()
            .map_err(|e| ConfigError::invalid("scenario", e))?;

        let model = match &config.system {
            SystemConfig::Linear { a, equilibrium } => {
                let a = matrix("system.a", a, n, Some(n))?;
                let x_e = match equilibrium {
                    Some(e) => vector("system.equilibrium", e, n)?,
                    None => Vector::zeros(n),
                };
                Model::Linear(
                    LinearSystem::new(a)
                        .with_equilibrium(x_e)
                        .with_input_map(input_map.clone()),
                )
            }
            SystemConfig::Nonlinear {
                f,
                equilibrium,
                region,
                hessian_bound,
            } => {
                let f = parse_dynamics(f, n).map_err(|e| ConfigError::invalid("system.f", e))?;
                let x_e = vector("system.equilibrium", equilibrium, n)?;
                if region.len() != n {
                    return Err(ConfigError::invalid(
                        "system.region",
                        format!("expected {n} intervals, got {}", region.len()),
                    ));
                }
                if let Some(i) = region.iter().position(|[lo, hi]| !(lo <= hi)) {
                    return Err(ConfigError::invalid(
                        format!("system.region[{i}]"),
                        "lower bound exceeds upper",
                    ));
                }
                if let Some(l) = hessian_bound {
                    if !(*l >= 0.0) {
                        return Err(ConfigError::invalid("system.hessian_bound", "must be nonnegative"));
                    }
                }
                let region = region.iter().map(|[lo, hi]| (*lo, *hi)).collect();
                let correction = NonlinearCorrection::new(&f, equilibrium.clone(), region, *hessian_bound)
                    .map_err(|e| ConfigError::invalid("system.region", e))?;
                let linearized = LinearSystem::new(f.jacobian(equilibrium))
                    .with_equilibrium(x_e)
                    .with_input_map(input_map.clone());
                Model::Nonlinear {
                    f,
                    correction,
                    linearized,
                }
            }
        };
        Ok(Self {
            config,
            phi,
            grid,
            x0,
            input_map,
            model,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_config(AnalysisConfig::load(path)?)
    }

    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    pub fn omega_dim(&self) -> usize {
        self.input_map.as_ref().map_or(self.state_dim(), |b| b.ncols())
    }

    /// The linear system (or the linearization) the envelopes are built on.
    pub fn linear_system(&self) -> &LinearSystem {
        match &self.model {
            Model::Linear(sys) => sys,
            Model::Nonlinear { linearized, .. } => linearized,
        }
    }

    /// The system integrated during Monte-Carlo validation.
    pub fn simulation_system(&self) -> System {
        let sys = match &self.model {
            Model::Linear(l) => System {
                dynamics: resilience_core::Dynamics::Linear {
                    a: l.a.clone(),
                    equilibrium: l.equilibrium.clone(),
                },
                input_map: None,
            },
            Model::Nonlinear { f, .. } => System::nonlinear(f.clone()),
        };
        sys.with_input_map(self.input_map.clone())
    }
}
