//! Dynamics `ẋ = f(x) + B_w w(t)`: expression parsing, fixed-step RK4
//! integration under bounded disturbances and Monte-Carlo validation.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Matrix, TimeGrid, Vector};
use crate::stl::{self, Formula, Signal, StlError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{name}` at byte {offset}")]
    UnknownVariable { name: String, offset: usize },
    #[error("expected {expected} expressions, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Stl(#[from] StlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based state index.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Neg(e) => -e.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => {
                let base = a.eval(x);
                match b.as_ref() {
                    Expr::Const(c) if c.fract() == 0.0 && c.abs() < 64.0 => base.powi(*c as i32),
                    _ => base.powf(b.eval(x)),
                }
            }
            Expr::Call(f, e) => {
                let v = e.eval(x);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                }
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

/// One expression per state coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsExpr {
    pub exprs: Vec<Expr>,
}

impl DynamicsExpr {
    pub fn dim(&self) -> usize {
        self.exprs.len()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.exprs) {
            *o = e.eval(x);
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.exprs.iter().map(|e| e.eval(x)).collect()
    }

    /// Central-difference Jacobian, relative step `1e-5`.
    pub fn jacobian(&self, x: &[f64]) -> Matrix {
        let n = self.dim();
        let mut jac = Matrix::zeros(n, n);
        let mut xp = x.to_vec();
        for j in 0..n {
            let h = 1e-5 * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            let fp = self.eval(&xp);
            xp[j] = x[j] - h;
            let fm = self.eval(&xp);
            xp[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac
    }

    /// Central-difference Hessian of component `i`, relative step `1e-5`.
    pub fn hessian(&self, i: usize, x: &[f64]) -> Matrix {
        let n = self.dim();
        let e = &self.exprs[i];
        let mut hess = Matrix::zeros(n, n);
        let mut p = x.to_vec();
        let h: Vec<f64> = x.iter().map(|v| 1e-5 * v.abs().max(1.0)).collect();
        let f0 = e.eval(x);
        for a in 0..n {
            p[a] = x[a] + h[a];
            let fp = e.eval(&p);
            p[a] = x[a] - h[a];
            let fm = e.eval(&p);
            p[a] = x[a];
            hess[(a, a)] = (fp - 2.0 * f0 + fm) / (h[a] * h[a]);
            for b in a + 1..n {
                let mut corner = |sa: f64, sb: f64| {
                    p[a] = x[a] + sa * h[a];
                    p[b] = x[b] + sb * h[b];
                    let v = e.eval(&p);
                    p[a] = x[a];
                    p[b] = x[b];
                    v
                };
                let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                    / (4.0 * h[a] * h[b]);
                hess[(a, b)] = v;
                hess[(b, a)] = v;
            }
        }
        hess
    }
}

impl fmt::Display for DynamicsExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.exprs.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Parses one expression per coordinate over variables `x1..xn`.
pub fn parse_dynamics<S: AsRef<str>>(texts: &[S], n: usize) -> Result<DynamicsExpr, DynamicsError> {
    if texts.len() != n {
        return Err(DynamicsError::Arity {
            expected: n,
            got: texts.len(),
        });
    }
    let exprs = texts
        .iter()
        .map(|t| parse_expr(t.as_ref(), n))
        .collect::<Result<_, _>>()?;
    Ok(DynamicsExpr { exprs })
}

/// Parses a single arithmetic expression over `x1..xn`.
pub fn parse_expr(text: &str, n: usize) -> Result<Expr, DynamicsError> {
    let mut p = ExprParser {
        src: text.as_bytes(),
        pos: 0,
        dim: n,
    };
    let e = p.sum()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

struct ExprParser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl ExprParser<'_> {
    fn error(&self, message: &str) -> DynamicsError {
        DynamicsError::Syntax {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn sum(&mut self) -> Result<Expr, DynamicsError> {
        let mut lhs = self.product()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.product()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.product()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn product(&mut self) -> Result<Expr, DynamicsError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, DynamicsError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.peek() == Some(b'+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, DynamicsError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, DynamicsError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.sum()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
                let func = match name {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    _ => None,
                };
                if let Some(func) = func {
                    if self.peek() != Some(b'(') {
                        return Err(self.error("expected `(` after function name"));
                    }
                    self.pos += 1;
                    let arg = self.sum()?;
                    if self.peek() != Some(b')') {
                        return Err(self.error("expected `)`"));
                    }
                    self.pos += 1;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                let index = name
                    .strip_prefix('x')
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|i| (1..=self.dim).contains(i));
                match index {
                    Some(i) => Ok(Expr::Var(i - 1)),
                    None => Err(DynamicsError::UnknownVariable {
                        name: name.to_string(),
                        offset: start,
                    }),
                }
            }
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr, DynamicsError> {
        let s = self.src;
        let start = self.pos;
        let mut i = start;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).expect("ascii");
        let v = text.parse::<f64>().map_err(|_| DynamicsError::Syntax {
            offset: start,
            message: format!("bad number `{text}`"),
        })?;
        self.pos = i;
        Ok(Expr::Const(v))
    }
}

#[derive(Debug, Clone)]
pub enum Dynamics {
    /// `ẋ = A(x - x_e)`.
    Linear {
        a: Matrix,
        equilibrium: Vector,
    },
    Nonlinear(DynamicsExpr),
}

/// `ẋ = f(x) + B_w w`, with `B_w = I` when no input map is given.
#[derive(Debug, Clone)]
pub struct System {
    pub dynamics: Dynamics,
    pub input_map: Option<Matrix>,
}

impl System {
    pub fn linear(a: Matrix) -> Self {
        let n = a.nrows();
        Self {
            dynamics: Dynamics::Linear {
                a,
                equilibrium: Vector::zeros(n),
            },
            input_map: None,
        }
    }

    pub fn nonlinear(f: DynamicsExpr) -> Self {
        Self {
            dynamics: Dynamics::Nonlinear(f),
            input_map: None,
        }
    }

    pub fn with_input_map(mut self, b: Option<Matrix>) -> Self {
        self.input_map = b;
        self
    }

    pub fn dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::Linear { a, .. } => a.nrows(),
            Dynamics::Nonlinear(f) => f.dim(),
        }
    }

    pub fn omega_dim(&self) -> usize {
        self.input_map.as_ref().map_or(self.dim(), |b| b.ncols())
    }

    fn rhs(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.dim();
        match &self.dynamics {
            Dynamics::Linear { a, equilibrium } => {
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += a[(i, j)] * (x[j] - equilibrium[j]);
                    }
                    out[i] = acc;
                }
            }
            Dynamics::Nonlinear(f) => f.eval_into(x, out),
        }
        match &self.input_map {
            None => out.iter_mut().zip(w).for_each(|(o, d)| *o += d),
            Some(b) => {
                for i in 0..n {
                    for (j, d) in w.iter().enumerate() {
                        out[i] += b[(i, j)] * d;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    Zero,
    /// Uniform in `[-ε, ε]` per component, redrawn every `hold_dt`.
    PiecewiseConstantRandom,
    /// `ε·sin(2π f t + φ)` per component with random frequency and phase.
    Sinusoid,
    /// Random box corner `±ε` per component, redrawn every `hold_dt`
    /// (`hold_dt = ∞` gives a constant corner).
    BangBangCorner,
}

/// A disturbance signal `w(t)` with `‖w(t)‖_∞ ≤ eps`, sampled once per integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSignal {
    pub kind: DisturbanceKind,
    pub eps: f64,
    pub hold_dt: f64,
    pub seed: u64,
    pub dim: usize,
}

impl DisturbanceSignal {
    pub fn new(kind: DisturbanceKind, eps: f64, hold_dt: f64, seed: u64, dim: usize) -> Self {
        Self {
            kind,
            eps,
            hold_dt,
            seed,
            dim,
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(DisturbanceKind::Zero, 0.0, f64::INFINITY, 0, dim)
    }

    /// Per-step values (`grid.len × dim`, row-major); step `k` holds on `[t_k, t_{k+1})`.
    pub fn sample(&self, grid: TimeGrid) -> Vec<f64> {
        let m = self.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = vec![0.0; grid.len * m];
        let eps = self.eps.abs();
        match self.kind {
            DisturbanceKind::Zero => {}
            DisturbanceKind::Sinusoid => {
                let params: Vec<(f64, f64)> = (0..m)
                    .map(|_| {
                        let freq = rng.random_range(0.05..=2.0);
                        let phase = rng.random_range(0.0..std::f64::consts::TAU);
                        (freq, phase)
                    })
                    .collect();
                for k in 0..grid.len {
                    let t = grid.time(k);
                    for (j, (freq, phase)) in params.iter().enumerate() {
                        let s = (std::f64::consts::TAU * freq * t + phase).sin().clamp(-1.0, 1.0);
                        out[k * m + j] = eps * s;
                    }
                }
            }
            DisturbanceKind::PiecewiseConstantRandom | DisturbanceKind::BangBangCorner => {
                let corner = self.kind == DisturbanceKind::BangBangCorner;
                let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                    (0..m)
                        .map(|_| {
                            if corner {
                                if rng.random_bool(0.5) {
                                    eps
                                } else {
                                    -eps
                                }
                            } else {
                                rng.random_range(-eps..=eps)
                            }
                        })
                        .collect()
                };
                let mut current = draw(&mut rng);
                let mut segment = 0usize;
                for k in 0..grid.len {
                    let seg = if self.hold_dt.is_finite() && self.hold_dt > 0.0 {
                        (grid.time(k) / self.hold_dt + 1e-9).floor() as usize
                    } else {
                        0
                    };
                    while segment < seg {
                        current = draw(&mut rng);
                        segment += 1;
                    }
                    out[k * m..(k + 1) * m].copy_from_slice(&current);
                }
            }
        }
        out
    }
}

/// Classical RK4 with the disturbance held constant over each step.
pub fn integrate_with(sys: &System, x0: &[f64], disturbance: &[f64], grid: TimeGrid) -> Result<Signal, DynamicsError> {
    let n = sys.dim();
    let m = sys.omega_dim();
    if x0.len() != n {
        return Err(DynamicsError::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    if disturbance.len() < grid.len.saturating_sub(1) * m {
        return Err(DynamicsError::DimensionMismatch {
            expected: grid.len * m,
            got: disturbance.len(),
        });
    }
    let dt = grid.dt;
    let mut data = Vec::with_capacity(n * grid.len);
    data.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..grid.len - 1 {
        let w = &disturbance[k * m..(k + 1) * m];
        sys.rhs(&x, w, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        sys.rhs(&tmp, w, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        sys.rhs(&tmp, w, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + dt * k3[i];
        }
        sys.rhs(&tmp, w, &mut k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite { t: grid.time(k + 1) });
        }
        data.extend_from_slice(&x);
    }
    Ok(Signal::from_flat(0.0, dt, n, data)?)
}

pub fn integrate(sys: &System, x0: &[f64], d: &DisturbanceSignal, grid: TimeGrid) -> Result<Signal, DynamicsError> {
    if d.dim != sys.omega_dim() {
        return Err(DynamicsError::DimensionMismatch {
            expected: sys.omega_dim(),
            got: d.dim,
        });
    }
    integrate_with(sys, x0, &d.sample(grid), grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub eps: f64,
    pub trials: usize,
    pub violations: usize,
    pub worst_robustness: f64,
    pub worst_seed: u64,
    pub worst_kind: DisturbanceKind,
    /// Disturbance mix used, for the record.
    pub sampling: String,
}

/// The disturbance family used for trial `index`.
pub fn trial_disturbance(index: usize, seed: u64, eps: f64, hold_dt: f64, dim: usize) -> DisturbanceSignal {
    let trial_seed = splitmix64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (kind, hold) = match index % 4 {
        0 => (DisturbanceKind::PiecewiseConstantRandom, hold_dt),
        1 => (DisturbanceKind::BangBangCorner, hold_dt),
        2 => (DisturbanceKind::BangBangCorner, f64::INFINITY),
        _ => (DisturbanceKind::Sinusoid, hold_dt),
    };
    DisturbanceSignal::new(kind, eps, hold, trial_seed, dim)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Integrates `trials` disturbed trajectories and evaluates `ρ(φ)` on each.
///
/// Trials cycle through piecewise-constant random, switching bang-bang,
/// constant-corner and sinusoidal disturbances with `hold_dt = 10·dt`.
/// A trial violates `φ` when its robustness is not strictly positive.
pub fn monte_carlo_validate(
    sys: &System,
    phi: &Formula,
    x0: &[f64],
    eps: f64,
    trials: usize,
    seed: u64,
    grid: TimeGrid,
) -> Result<ViolationReport, DynamicsError> {
    let m = sys.omega_dim();
    let hold_dt = 10.0 * grid.dt;
    let outcomes: Vec<(f64, u64, DisturbanceKind)> = (0..trials.max(1))
        .into_par_iter()
        .map(|j| {
            let d = trial_disturbance(j, seed, eps, hold_dt, m);
            let traj = integrate(sys, x0, &d, grid)?;
            let rho = stl::robustness(phi, &traj, 0.0)?;
            Ok((rho, d.seed, d.kind))
        })
        .collect::<Result<_, DynamicsError>>()?;
    let violations = outcomes.iter().filter(|(r, _, _)| *r <= 0.0).count();
    let (worst_robustness, worst_seed, worst_kind) = outcomes
        .iter()
        .cloned()
        .reduce(|a, b| if b.0 < a.0 { b } else { a })
        .expect("at least one trial");
    Ok(ViolationReport {
        eps,
        trials: outcomes.len(),
        violations,
        worst_robustness,
        worst_seed,
        worst_kind,
        sampling: format!(
            "cycle of piecewise_constant_random, bang_bang_corner (switching), bang_bang_corner (constant), sinusoid; hold_dt = {hold_dt}"
        ),
    })
}
