//! Dense linear algebra: spectral decomposition, matrix exponentials and
//! the envelope gain curves that bound disturbed trajectories.
//!
//! Gains come in three flavours:
//!
//! * [`GainKind::Jordan`]: `|P| J_R^{-1}(e^{J_R t} - I) |P^{-1}|`
//! * [`GainKind::Absolute`]: `Ã^{-1}(e^{Ã t} - I)` with `Ã = |P||J||P^{-1}|`
//! * [`GainKind::Gronwall`]: the classic `(e^{Lt} - 1)/L` estimate, kept as a baseline.
//!
//! `P` is the complex eigenvector matrix. Conjugate pairs share a real part,
//! so `J_R` is real and diagonal; `|P|` is the elementwise complex modulus.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMatrix = DMatrix<Complex64>;

/// Relative reconstruction residual accepted by [`decompose`].
pub const RECONSTRUCTION_TOL: f64 = 1e-8;
/// Eigenvector-basis condition number above which the matrix counts as defective.
pub const COND_LIMIT: f64 = 1e10;
/// Smallest admissible `|Re(λ)|`.
pub const REAL_PART_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("eigenvector basis is numerically rank-deficient (cond(P) = {cond:.3e}); Jordan chains are not supported")]
    DefectiveMatrix { cond: f64 },
    #[error("eigenvalue {re} + {im}i has (near) zero real part")]
    SingularRealPart { re: f64, im: f64 },
    #[error("eigendecomposition failed to reconstruct the matrix (relative residual {residual:.3e})")]
    Reconstruction { residual: f64 },
    #[error("|P||J||P^-1| is numerically singular")]
    SingularAbsoluteMatrix,
    #[error("time grid must have dt > 0 and at least one point")]
    InvalidGrid,
}

/// Elementwise magnitude.
pub fn abs(m: &Matrix) -> Matrix {
    m.map(f64::abs)
}

/// Elementwise modulus of a complex matrix.
pub fn cabs(m: &CMatrix) -> Matrix {
    m.map(|z| z.norm())
}

/// `a ⪯ b + tol` elementwise. `None` when the shapes differ.
pub fn preceq(a: &Matrix, b: &Matrix, tol: f64) -> Option<bool> {
    if a.shape() != b.shape() {
        return None;
    }
    Some(a.iter().zip(b.iter()).all(|(x, y)| *x <= *y + tol))
}

/// Induced 2-norm (largest singular value).
pub fn norm2(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

fn ensure_square(m: &Matrix) -> Result<usize, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// Matrix exponential (scaling and squaring with Padé approximants).
pub fn expm(m: &Matrix) -> Result<Matrix, LinalgError> {
    ensure_square(m)?;
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    Ok(m.exp())
}

/// Uniform time grid `t_k = k·dt`, `k = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub len: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, len: usize) -> Result<Self, LinalgError> {
        if !(dt > 0.0 && dt.is_finite()) || len == 0 {
            return Err(LinalgError::InvalidGrid);
        }
        Ok(Self { dt, len })
    }

    /// Grid covering `[0, t_end]`; the last point is the first grid point at or past `t_end`.
    pub fn spanning(t_end: f64, dt: f64) -> Result<Self, LinalgError> {
        if !(dt > 0.0 && dt.is_finite()) || !(t_end >= 0.0) {
            return Err(LinalgError::InvalidGrid);
        }
        let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
        Self::new(dt, steps + 1)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len - 1)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|k| self.time(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainKind {
    Jordan,
    Absolute,
    Gronwall,
}

impl std::fmt::Display for GainKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GainKind::Jordan => "jordan",
            GainKind::Absolute => "absolute",
            GainKind::Gronwall => "gronwall",
        })
    }
}

impl std::str::FromStr for GainKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jordan" => Ok(GainKind::Jordan),
            "absolute" => Ok(GainKind::Absolute),
            "gronwall" => Ok(GainKind::Gronwall),
            other => Err(format!("unknown gain method `{other}`")),
        }
    }
}

/// Nonnegative gain matrices sampled on a time grid.
#[derive(Debug, Clone)]
pub struct GainCurve {
    pub grid: TimeGrid,
    pub gains: Vec<Matrix>,
    pub kind: GainKind,
}

impl GainCurve {
    pub fn dim(&self) -> usize {
        self.gains.first().map_or(0, |g| g.nrows())
    }

    /// Largest induced 2-norm over the grid.
    pub fn max_norm(&self) -> f64 {
        self.gains.iter().map(norm2).fold(0.0, f64::max)
    }
}

/// Eigen-structure of a diagonalizable matrix with no purely imaginary eigenvalues.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// Complex eigenvector matrix, unit-norm columns; conjugate pairs adjacent.
    pub p: CMatrix,
    pub p_inv: CMatrix,
    /// Real block-diagonalizing transform (`[Re v, Im v]` for each pair).
    pub p_real: Matrix,
    pub p_real_inv: Matrix,
    /// Real block form: `[[a, b], [-b, a]]` for each pair `a ± bi`.
    pub j_block: Matrix,
    /// `diag(Re λ)`, ordered like the columns of `p`.
    pub j_r: Matrix,
    pub eigenvalues: Vec<Complex64>,
    pub cond_p: f64,
    pub hurwitz: bool,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `|P| D |P^{-1}|` for a diagonal `D` given by its entries.
    fn sandwich(&self, diag: impl Fn(usize) -> f64) -> Matrix {
        let n = self.dim();
        let left = cabs(&self.p);
        let right = cabs(&self.p_inv);
        let mut scaled = left;
        for j in 0..n {
            let d = diag(j);
            scaled.column_mut(j).scale_mut(d);
        }
        scaled * right
    }

    /// `Ã = |P||J||P^{-1}|`.
    pub fn absolute_matrix(&self) -> Matrix {
        self.sandwich(|j| self.eigenvalues[j].norm())
    }

    /// `e^{J_R t}`.
    pub fn exp_jr(&self, t: f64) -> Matrix {
        Matrix::from_diagonal(&Vector::from_iterator(
            self.dim(),
            self.eigenvalues.iter().map(|l| (l.re * t).exp()),
        ))
    }
}

fn eigenvalue_scale(a: &Matrix) -> f64 {
    a.norm().max(1.0)
}

/// Right null space of `m` (columns), estimated from the `k` smallest singular values.
/// Returns the basis together with the `k`-th smallest singular value.
fn null_space(m: &CMatrix, k: usize) -> (CMatrix, f64) {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let mut basis = CMatrix::zeros(n, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        for r in 0..n {
            basis[(r, c)] = v_t[(idx, r)].conj();
        }
    }
    let sigma_k = svd.singular_values[order[k - 1]];
    (basis, sigma_k)
}

/// Rotates a vector so its largest entry is real and positive.
fn normalize_phase(v: &mut DVector<Complex64>) {
    let (idx, _) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .expect("nonempty");
    let pivot = v[idx];
    let phase = pivot.conj() / pivot.norm();
    let norm = v.norm();
    for z in v.iter_mut() {
        *z = *z * phase / norm;
    }
}

/// Diagonalizes `a` as `A = P diag(λ) P^{-1}`.
pub fn decompose(a: &Matrix) -> Result<SpectralDecomposition, LinalgError> {
    let n = ensure_square(a)?;
    if n == 0 {
        return Err(LinalgError::NotSquare { rows: 0, cols: 0 });
    }
    let scale = eigenvalue_scale(a);
    let raw: Vec<Complex64> = a.clone().schur().complex_eigenvalues().iter().cloned().collect();

    for l in &raw {
        if l.re.abs() < REAL_PART_TOL {
            return Err(LinalgError::SingularRealPart { re: l.re, im: l.im });
        }
    }

    // Representatives: real eigenvalues and the upper member of each conjugate pair.
    let imag_tol = 1e-12 * scale;
    let mut reps: Vec<Complex64> = raw
        .iter()
        .filter(|l| l.im > imag_tol || l.im.abs() <= imag_tol)
        .map(|l| {
            if l.im.abs() <= imag_tol {
                Complex64::new(l.re, 0.0)
            } else {
                *l
            }
        })
        .collect();
    reps.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));

    // Group numerically repeated eigenvalues.
    let cluster_tol = 1e-6 * scale;
    let mut clusters: Vec<Vec<Complex64>> = Vec::new();
    for l in reps {
        match clusters.iter_mut().find(|c| (c[0] - l).norm() <= cluster_tol) {
            Some(c) => c.push(l),
            None => clusters.push(vec![l]),
        }
    }

    let ac: CMatrix = a.map(|x| Complex64::new(x, 0.0));
    let mut columns: Vec<DVector<Complex64>> = Vec::with_capacity(n);
    let mut eigenvalues: Vec<Complex64> = Vec::with_capacity(n);
    let nullity_tol = 1e-8 * scale;
    for cluster in clusters {
        let k = cluster.len();
        let mean = cluster.iter().sum::<Complex64>() / k as f64;
        let is_real = mean.im == 0.0;
        let shifted = &ac - CMatrix::identity(n, n) * mean;
        let (basis, sigma_k) = if is_real {
            let real_shifted = shifted.map(|z| z.re);
            let (b, s) = null_space(&real_shifted.map(|x| Complex64::new(x, 0.0)), k);
            (b.map(|z| Complex64::new(z.re, 0.0)), s)
        } else {
            null_space(&shifted, k)
        };
        if sigma_k > nullity_tol {
            return Err(LinalgError::DefectiveMatrix { cond: f64::INFINITY });
        }
        for c in 0..k {
            let mut v = basis.column(c).into_owned();
            if is_real {
                let norm = v.norm();
                v /= Complex64::new(norm, 0.0);
                columns.push(v);
                eigenvalues.push(mean);
            } else {
                normalize_phase(&mut v);
                let conj = v.map(|z| z.conj());
                columns.push(v);
                eigenvalues.push(mean);
                columns.push(conj);
                eigenvalues.push(mean.conj());
            }
        }
    }
    if columns.len() != n {
        return Err(LinalgError::DefectiveMatrix { cond: f64::INFINITY });
    }

    let p = CMatrix::from_columns(&columns);
    let sv = p.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond_p = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond_p <= COND_LIMIT) {
        return Err(LinalgError::DefectiveMatrix { cond: cond_p });
    }
    let p_inv = p
        .clone()
        .try_inverse()
        .ok_or(LinalgError::DefectiveMatrix { cond: cond_p })?;

    let j = CMatrix::from_diagonal(&DVector::from_vec(eigenvalues.clone()));
    let recon = (&p * j * &p_inv).map(|z| z.re);
    let residual = (a - recon).norm() / a.norm().max(f64::MIN_POSITIVE);
    if residual > RECONSTRUCTION_TOL {
        return Err(LinalgError::Reconstruction { residual });
    }

    // Real block form.
    let mut p_real = Matrix::zeros(n, n);
    let mut j_block = Matrix::zeros(n, n);
    let mut c = 0;
    while c < n {
        let l = eigenvalues[c];
        if l.im == 0.0 {
            p_real.set_column(c, &p.column(c).map(|z| z.re));
            j_block[(c, c)] = l.re;
            c += 1;
        } else {
            p_real.set_column(c, &p.column(c).map(|z| z.re));
            p_real.set_column(c + 1, &p.column(c).map(|z| z.im));
            j_block[(c, c)] = l.re;
            j_block[(c + 1, c + 1)] = l.re;
            j_block[(c, c + 1)] = l.im;
            j_block[(c + 1, c)] = -l.im;
            c += 2;
        }
    }
    let p_real_inv = p_real
        .clone()
        .try_inverse()
        .ok_or(LinalgError::DefectiveMatrix { cond: cond_p })?;
    let j_r = Matrix::from_diagonal(&Vector::from_iterator(n, eigenvalues.iter().map(|l| l.re)));
    let hurwitz = eigenvalues.iter().all(|l| l.re < 0.0);
    if !hurwitz {
        log::warn!("system matrix is not Hurwitz; envelope gains grow without bound");
    }

    Ok(SpectralDecomposition {
        p,
        p_inv,
        p_real,
        p_real_inv,
        j_block,
        j_r,
        eigenvalues,
        cond_p,
        hurwitz,
    })
}

/// `(e^{a t} - 1) / a`, evaluated without cancellation for small `a t`.
fn phi1(a: f64, t: f64) -> f64 {
    let x = a * t;
    if x.abs() < 1e-5 {
        t * (1.0 + x / 2.0 + x * x / 6.0)
    } else {
        x.exp_m1() / a
    }
}

/// `A_J(t) = |P| J_R^{-1}(e^{J_R t} - I) |P^{-1}|` on every grid point.
pub fn jordan_gain(dec: &SpectralDecomposition, grid: TimeGrid) -> Result<GainCurve, LinalgError> {
    if let Some(l) = dec.eigenvalues.iter().find(|l| l.re.abs() < REAL_PART_TOL) {
        return Err(LinalgError::SingularRealPart { re: l.re, im: l.im });
    }
    let gains = grid
        .times()
        .map(|t| dec.sandwich(|j| phi1(dec.eigenvalues[j].re, t)))
        .collect();
    Ok(GainCurve {
        grid,
        gains,
        kind: GainKind::Jordan,
    })
}

/// `∫_0^t e^{M s} ds` via the exponential of the augmented matrix `[[M, I], [0, 0]]`.
fn integrated_exp(m: &Matrix, t: f64) -> Matrix {
    let n = m.nrows();
    let mut aug = Matrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(m * t));
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    aug.view_mut((0, n), (n, n)).scale_mut(t);
    aug.exp().view((0, n), (n, n)).into_owned()
}

/// `A_N(t) = Ã^{-1}(e^{Ã t} - I)`, `Ã = |P||J||P^{-1}|`.
pub fn absolute_gain(a: &Matrix, dec: &SpectralDecomposition, grid: TimeGrid) -> Result<GainCurve, LinalgError> {
    let n = ensure_square(a)?;
    if n != dec.dim() {
        return Err(LinalgError::ShapeMismatch {
            expected: format!("{}x{}", dec.dim(), dec.dim()),
            got: format!("{n}x{n}"),
        });
    }
    let a_tilde = dec.absolute_matrix();
    let sv = a_tilde.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > 1e-12 * smax) {
        return Err(LinalgError::SingularAbsoluteMatrix);
    }
    // Propagate with a single step exponential: G(t+dt) = G(t) + e^{Ã t} G(dt).
    let step_int = integrated_exp(&a_tilde, grid.dt);
    let step_exp = a_tilde.map(|x| x * grid.dt).exp();
    let mut gains = Vec::with_capacity(grid.len);
    let mut g = Matrix::zeros(n, n);
    let mut e = Matrix::identity(n, n);
    for k in 0..grid.len {
        if k > 0 {
            g += &e * &step_int;
            e = &e * &step_exp;
        }
        gains.push(g.map(|x| x.max(0.0)));
    }
    Ok(GainCurve {
        grid,
        gains,
        kind: GainKind::Absolute,
    })
}

/// Grönwall baseline: `((e^{L t} - 1)/L)·𝟙𝟙ᵀ` with `L = ‖A‖₂`.
///
/// Each coordinate of the deviation is bounded by `‖Δx‖₂ ≤ √n·ε·(e^{Lt}-1)/L`; the
/// all-ones matrix applied to `ε𝟙` gives `n·ε·(e^{Lt}-1)/L`, which dominates it.
pub fn gronwall_gain(a: &Matrix, grid: TimeGrid) -> Result<GainCurve, LinalgError> {
    let n = ensure_square(a)?;
    let l = norm2(a);
    let gains = grid
        .times()
        .map(|t| {
            let s = if l > 0.0 { phi1(l, t) } else { t };
            Matrix::from_element(n, n, s)
        })
        .collect();
    Ok(GainCurve {
        grid,
        gains,
        kind: GainKind::Gronwall,
    })
}

/// Dispatches on `kind`, decomposing `a` when the method needs it.
pub fn gain_curve(a: &Matrix, kind: GainKind, grid: TimeGrid) -> Result<GainCurve, LinalgError> {
    match kind {
        GainKind::Jordan => jordan_gain(&decompose(a)?, grid),
        GainKind::Absolute => absolute_gain(a, &decompose(a)?, grid),
        GainKind::Gronwall => gronwall_gain(a, grid),
    }
}
