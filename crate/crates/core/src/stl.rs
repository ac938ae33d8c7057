//! Signal Temporal Logic: formula AST, text parser, quantitative robustness
//! over uniformly sampled signals and the structural Lipschitz constant.
//!
//! # Grammar
//!
//! ```text
//! phi  := disj
//! disj := conj ("||" conj)*
//! conj := un ("&&" un)*
//! un   := "!" un | "G[" a "," b "](" phi ")" | "F[" a "," b "](" phi ")"
//!       | "(" phi ")" | "true" | pred
//! pred := lin (">=" | "<=") number
//! lin  := term (("+" | "-") term)*
//! term := ["-"] number "*" "x"index | ["-"] "x"index | ["-"] number
//! ```
//!
//! State indices are 1-based. Temporal windows `[t+a, t+b]` are snapped
//! outward to the sampling grid (`floor` at the left end, `ceil` at the
//! right), so the discrete window always contains the continuous one.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StlError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("state index x{index} at byte {offset} exceeds dimension {dim}")]
    Index { index: usize, dim: usize, offset: usize },
    #[error("signal too short: need sample {needed}, last available is {available}")]
    HorizonExceeded { needed: usize, available: usize },
    #[error("time {t} is not on the sampling grid")]
    TimeNotOnGrid { t: f64 },
    #[error("formula uses {expected} state dimensions but the signal has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid temporal interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    Le,
    Ge,
}

/// Affine predicate `c·x <= rhs` or `c·x >= rhs`, with `h(x) = rhs - c·x`
/// or `h(x) = c·x - rhs` respectively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub coeffs: Vec<f64>,
    pub cmp: Comparison,
    pub rhs: f64,
}

impl Predicate {
    pub fn new(coeffs: Vec<f64>, cmp: Comparison, rhs: f64) -> Self {
        Self { coeffs, cmp, rhs }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let dot: f64 = self.coeffs.iter().zip(x).map(|(c, v)| c * v).sum();
        match self.cmp {
            Comparison::Ge => dot - self.rhs,
            Comparison::Le => self.rhs - dot,
        }
    }

    /// Lipschitz constant of `h` with respect to the sup norm: `‖c‖₁`.
    pub fn lipschitz(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Formula {
    True,
    Predicate(Predicate),
    Not { arg: Box<Formula> },
    And { args: Vec<Formula> },
    Or { args: Vec<Formula> },
    Always { a: f64, b: f64, arg: Box<Formula> },
    Eventually { a: f64, b: f64, arg: Box<Formula> },
}

impl Formula {
    #[allow(clippy::should_implement_trait)]
    pub fn not(arg: Formula) -> Self {
        Formula::Not { arg: Box::new(arg) }
    }

    pub fn and(args: Vec<Formula>) -> Self {
        Formula::And { args }
    }

    pub fn or(args: Vec<Formula>) -> Self {
        Formula::Or { args }
    }

    pub fn always(a: f64, b: f64, arg: Formula) -> Self {
        Formula::Always {
            a,
            b,
            arg: Box::new(arg),
        }
    }

    pub fn eventually(a: f64, b: f64, arg: Formula) -> Self {
        Formula::Eventually {
            a,
            b,
            arg: Box::new(arg),
        }
    }

    /// Number of state coordinates referenced (highest index).
    pub fn dim(&self) -> usize {
        match self {
            Formula::True => 0,
            Formula::Predicate(p) => p.coeffs.len(),
            Formula::Not { arg } | Formula::Always { arg, .. } | Formula::Eventually { arg, .. } => arg.dim(),
            Formula::And { args } | Formula::Or { args } => args.iter().map(Formula::dim).max().unwrap_or(0),
        }
    }

    /// Nesting-summed maximum of the interval right ends, in seconds.
    pub fn horizon(&self) -> f64 {
        match self {
            Formula::True | Formula::Predicate(_) => 0.0,
            Formula::Not { arg } => arg.horizon(),
            Formula::And { args } | Formula::Or { args } => args.iter().map(Formula::horizon).fold(0.0, f64::max),
            Formula::Always { b, arg, .. } | Formula::Eventually { b, arg, .. } => b + arg.horizon(),
        }
    }

    /// Horizon in samples for a grid with spacing `dt`.
    pub fn horizon_steps(&self, dt: f64) -> usize {
        match self {
            Formula::True | Formula::Predicate(_) => 0,
            Formula::Not { arg } => arg.horizon_steps(dt),
            Formula::And { args } | Formula::Or { args } => args.iter().map(|f| f.horizon_steps(dt)).max().unwrap_or(0),
            Formula::Always { a, b, arg } | Formula::Eventually { a, b, arg } => {
                window_steps(*a, *b, dt).1 + arg.horizon_steps(dt)
            }
        }
    }

    /// Checks interval ordering and finiteness; used after JSON deserialization.
    pub fn validate(&self) -> Result<(), StlError> {
        match self {
            Formula::True => Ok(()),
            Formula::Predicate(p) => {
                if p.coeffs.iter().chain(std::iter::once(&p.rhs)).all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(StlError::Syntax {
                        offset: 0,
                        message: "non-finite predicate coefficient".into(),
                    })
                }
            }
            Formula::Not { arg } => arg.validate(),
            Formula::And { args } | Formula::Or { args } => {
                if args.is_empty() {
                    return Err(StlError::Syntax {
                        offset: 0,
                        message: "empty conjunction or disjunction".into(),
                    });
                }
                args.iter().try_for_each(Formula::validate)
            }
            Formula::Always { a, b, arg } | Formula::Eventually { a, b, arg } => {
                if !(a.is_finite() && b.is_finite() && 0.0 <= *a && a <= b) {
                    return Err(StlError::InvalidInterval { a: *a, b: *b });
                }
                arg.validate()
            }
        }
    }

    /// Pads every predicate's coefficient vector to `dim` entries.
    pub fn with_dim(mut self, dim: usize) -> Result<Self, StlError> {
        fn pad(f: &mut Formula, dim: usize) -> Result<(), StlError> {
            match f {
                Formula::True => Ok(()),
                Formula::Predicate(p) => {
                    if p.coeffs.len() > dim {
                        return Err(StlError::Index {
                            index: p.coeffs.len(),
                            dim,
                            offset: 0,
                        });
                    }
                    p.coeffs.resize(dim, 0.0);
                    Ok(())
                }
                Formula::Not { arg } | Formula::Always { arg, .. } | Formula::Eventually { arg, .. } => pad(arg, dim),
                Formula::And { args } | Formula::Or { args } => args.iter_mut().try_for_each(|a| pad(a, dim)),
            }
        }
        pad(&mut self, dim)?;
        Ok(self)
    }
}

fn fmt_child(f: &mut fmt::Formatter<'_>, child: &Formula) -> fmt::Result {
    write!(f, "({child})")
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            write!(f, "0")?;
        }
        for (i, c) in self.coeffs.iter().enumerate() {
            let sign_neg = c.is_sign_negative();
            match (i, sign_neg) {
                (0, true) => write!(f, "-")?,
                (0, false) => {}
                (_, true) => write!(f, " - ")?,
                (_, false) => write!(f, " + ")?,
            }
            write!(f, "{}*x{}", c.abs(), i + 1)?;
        }
        let op = match self.cmp {
            Comparison::Le => "<=",
            Comparison::Ge => ">=",
        };
        write!(f, " {op} {}", self.rhs)
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => write!(f, "true"),
            Formula::Predicate(p) => write!(f, "{p}"),
            Formula::Not { arg } => {
                write!(f, "!")?;
                fmt_child(f, arg)
            }
            Formula::And { args } | Formula::Or { args } => {
                let sep = if matches!(self, Formula::And { .. }) {
                    " && "
                } else {
                    " || "
                };
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    fmt_child(f, a)?;
                }
                Ok(())
            }
            Formula::Always { a, b, arg } => write!(f, "G[{a},{b}]({arg})"),
            Formula::Eventually { a, b, arg } => write!(f, "F[{a},{b}]({arg})"),
        }
    }
}

impl std::str::FromStr for Formula {
    type Err = StlError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// Parses a formula; the dimension is inferred from the highest state index.
pub fn parse(text: &str) -> Result<Formula, StlError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        dim: None,
    };
    let f = p.formula()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(f)
}

/// Parses a formula over a state of dimension `dim`; predicates are padded to `dim`.
pub fn parse_with_dim(text: &str, dim: usize) -> Result<Formula, StlError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        dim: Some(dim),
    };
    let f = p.formula()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    f.with_dim(dim)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: Option<usize>,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> StlError {
        StlError::Syntax {
            offset: self.pos,
            message: message.to_string(),
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

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(token.as_bytes()) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), StlError> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{token}`")))
        }
    }

    fn formula(&mut self) -> Result<Formula, StlError> {
        let mut args = vec![self.conj()?];
        while self.eat("||") {
            args.push(self.conj()?);
        }
        Ok(if args.len() == 1 {
            args.pop().expect("one")
        } else {
            Formula::Or { args }
        })
    }

    fn conj(&mut self) -> Result<Formula, StlError> {
        let mut args = vec![self.unary()?];
        while self.eat("&&") {
            args.push(self.unary()?);
        }
        Ok(if args.len() == 1 {
            args.pop().expect("one")
        } else {
            Formula::And { args }
        })
    }

    fn unary(&mut self) -> Result<Formula, StlError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'!') => {
                self.pos += 1;
                Ok(Formula::not(self.unary()?))
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.formula()?;
                self.expect(")")?;
                Ok(inner)
            }
            Some(c @ (b'G' | b'F')) => {
                self.pos += 1;
                let open = self.pos;
                self.expect("[")?;
                let a = self.number()?;
                self.expect(",")?;
                let b = self.number()?;
                self.expect("]")?;
                if !(0.0 <= a && a <= b) {
                    return Err(StlError::Syntax {
                        offset: open,
                        message: format!("invalid interval [{a}, {b}]: need 0 <= a <= b"),
                    });
                }
                self.expect("(")?;
                let inner = self.formula()?;
                self.expect(")")?;
                Ok(if c == b'G' {
                    Formula::always(a, b, inner)
                } else {
                    Formula::eventually(a, b, inner)
                })
            }
            Some(_) => {
                if self.eat("true") {
                    return Ok(Formula::True);
                }
                self.predicate()
            }
        }
    }

    fn predicate(&mut self) -> Result<Formula, StlError> {
        let mut coeffs: Vec<f64> = Vec::new();
        let mut constant = 0.0;
        let mut first = true;
        loop {
            let mut sign = 1.0;
            if first {
                if self.eat("-") {
                    sign = -1.0;
                } else {
                    self.eat("+");
                }
            } else if self.eat("+") {
                // sign stays positive
            } else if self.eat("-") {
                sign = -1.0;
            } else {
                break;
            }
            first = false;
            self.skip_ws();
            // Allow `+ -2*x1`.
            if self.eat("-") {
                sign = -sign;
            }
            let (coef, var) = match self.peek() {
                Some(b'x') => (1.0, Some(self.variable()?)),
                Some(c) if c.is_ascii_digit() || c == b'.' => {
                    let v = self.number()?;
                    if self.eat("*") {
                        (v, Some(self.variable()?))
                    } else {
                        (v, None)
                    }
                }
                _ => return Err(self.error("expected a term")),
            };
            match var {
                Some(idx) => {
                    if coeffs.len() < idx {
                        coeffs.resize(idx, 0.0);
                    }
                    coeffs[idx - 1] += sign * coef;
                }
                None => constant += sign * coef,
            }
        }
        let cmp = if self.eat("<=") {
            Comparison::Le
        } else if self.eat(">=") {
            Comparison::Ge
        } else {
            return Err(self.error("expected `<=` or `>=`"));
        };
        let neg = self.eat("-");
        if !neg {
            self.eat("+");
        }
        let rhs = self.number()?;
        let rhs = if neg { -rhs } else { rhs };
        Ok(Formula::Predicate(Predicate::new(coeffs, cmp, rhs - constant)))
    }

    fn variable(&mut self) -> Result<usize, StlError> {
        self.skip_ws();
        let start = self.pos;
        if self.src.get(self.pos) != Some(&b'x') {
            return Err(self.error("expected a state variable `x<index>`"));
        }
        self.pos += 1;
        let digits_start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if digits_start == self.pos {
            return Err(self.error("expected an index after `x`"));
        }
        let text = std::str::from_utf8(&self.src[digits_start..self.pos]).expect("ascii");
        let index: usize = text.parse().map_err(|_| StlError::Syntax {
            offset: digits_start,
            message: "index out of range".into(),
        })?;
        let dim = self.dim.unwrap_or(usize::MAX);
        if index == 0 || index > dim {
            return Err(StlError::Index {
                index,
                dim: self.dim.unwrap_or(0),
                offset: start,
            });
        }
        Ok(index)
    }

    fn number(&mut self) -> Result<f64, StlError> {
        self.skip_ws();
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && s[i].is_ascii_digit() {
            i += 1;
        }
        if i < s.len() && s[i] == b'.' {
            i += 1;
            while i < s.len() && s[i].is_ascii_digit() {
                i += 1;
            }
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
        let value: f64 = text.parse().map_err(|_| StlError::Syntax {
            offset: start,
            message: "expected a number".into(),
        })?;
        self.pos = i;
        Ok(value)
    }
}

/// A trajectory sampled on the uniform grid `t0 + k·dt`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub t0: f64,
    pub dt: f64,
    dim: usize,
    data: Vec<f64>,
}

impl Signal {
    pub fn from_flat(t0: f64, dt: f64, dim: usize, data: Vec<f64>) -> Result<Self, StlError> {
        if !(dt > 0.0) || dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(StlError::InvalidSignal(format!(
                "dt={dt}, dim={dim}, {} values",
                data.len()
            )));
        }
        Ok(Self { t0, dt, dim, data })
    }

    pub fn from_samples(t0: f64, dt: f64, samples: &[Vec<f64>]) -> Result<Self, StlError> {
        let dim = samples.first().map_or(0, Vec::len);
        if samples.iter().any(|s| s.len() != dim) {
            return Err(StlError::InvalidSignal("ragged samples".into()));
        }
        Self::from_flat(t0, dt, dim, samples.concat())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn sample_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Grid index of `t`, accepting anything within `dt/2` of a sample.
    pub fn index_of(&self, t: f64) -> Result<usize, StlError> {
        let x = (t - self.t0) / self.dt;
        let k = x.round();
        if !(k >= 0.0) || (x - k).abs() > 0.5 + 1e-12 {
            return Err(StlError::TimeNotOnGrid { t });
        }
        Ok(k as usize)
    }

    /// `max_k ‖self_k - other_k‖_∞`.
    pub fn sup_distance(&self, other: &Signal) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Grid steps of the window `[a, b]`, snapped outward.
pub fn window_steps(a: f64, b: f64, dt: f64) -> (usize, usize) {
    let lo = (a / dt + 1e-9).floor().max(0.0) as usize;
    let hi = (b / dt - 1e-9).ceil().max(0.0) as usize;
    (lo, hi.max(lo))
}

/// Robustness `ρ(φ, x, t)`; positive means satisfied.
pub fn robustness(phi: &Formula, sig: &Signal, t: f64) -> Result<f64, StlError> {
    let k = sig.index_of(t)?;
    Ok(robustness_trace(phi, sig, k, 1)?[0])
}

/// Robustness at `len` consecutive grid indices starting at `start`.
pub fn robustness_trace(phi: &Formula, sig: &Signal, start: usize, len: usize) -> Result<Vec<f64>, StlError> {
    let dim = phi.dim();
    if dim > sig.dim() {
        return Err(StlError::DimensionMismatch {
            expected: dim,
            got: sig.dim(),
        });
    }
    let needed = start + len.saturating_sub(1) + phi.horizon_steps(sig.dt);
    if needed >= sig.len() {
        return Err(StlError::HorizonExceeded {
            needed,
            available: sig.len() - 1,
        });
    }
    Ok(eval(phi, sig, start, len))
}

fn eval(phi: &Formula, sig: &Signal, start: usize, len: usize) -> Vec<f64> {
    match phi {
        Formula::True => vec![f64::INFINITY; len],
        Formula::Predicate(p) => (start..start + len).map(|k| p.eval(sig.sample(k))).collect(),
        Formula::Not { arg } => {
            let mut v = eval(arg, sig, start, len);
            v.iter_mut().for_each(|x| *x = -*x);
            v
        }
        Formula::And { args } | Formula::Or { args } => {
            let is_and = matches!(phi, Formula::And { .. });
            let mut acc = eval(&args[0], sig, start, len);
            for a in &args[1..] {
                let v = eval(a, sig, start, len);
                for (x, y) in acc.iter_mut().zip(v) {
                    *x = if is_and { x.min(y) } else { x.max(y) };
                }
            }
            acc
        }
        Formula::Always { a, b, arg } | Formula::Eventually { a, b, arg } => {
            let (ka, kb) = window_steps(*a, *b, sig.dt);
            let width = kb - ka + 1;
            let inner = eval(arg, sig, start + ka, len + width - 1);
            let is_min = matches!(phi, Formula::Always { .. });
            sliding_extremum(&inner, width, is_min)
        }
    }
}

/// `out[i] = min/max(values[i..i + width])` with a monotone deque.
fn sliding_extremum(values: &[f64], width: usize, is_min: bool) -> Vec<f64> {
    use std::collections::VecDeque;
    let better = |x: f64, y: f64| if is_min { x <= y } else { x >= y };
    let out_len = values.len() + 1 - width;
    let mut out = Vec::with_capacity(out_len);
    let mut dq: VecDeque<usize> = VecDeque::new();
    for (i, &v) in values.iter().enumerate() {
        while let Some(&back) = dq.back() {
            if better(v, values[back]) {
                dq.pop_back();
            } else {
                break;
            }
        }
        dq.push_back(i);
        if let Some(&front) = dq.front() {
            if front + width <= i {
                dq.pop_front();
            }
        }
        if i + 1 >= width {
            out.push(values[*dq.front().expect("nonempty")]);
        }
    }
    out
}

/// Lipschitz constant of `ρ` with respect to the sup norm on signals.
pub fn lipschitz(phi: &Formula) -> f64 {
    match phi {
        Formula::True => 0.0,
        Formula::Predicate(p) => p.lipschitz(),
        Formula::Not { arg } | Formula::Always { arg, .. } | Formula::Eventually { arg, .. } => lipschitz(arg),
        Formula::And { args } | Formula::Or { args } => args.iter().map(lipschitz).fold(0.0, f64::max),
    }
}
