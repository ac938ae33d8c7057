//! Nominal trajectories and the parameterized envelope signals
//! `ξ̄_ω = ξ₀ + A(t)·|B_w|·ω` built on top of a gain curve.

use std::io::{Read, Write};

use thiserror::Error;

use crate::linalg::{self, GainCurve, LinalgError, Matrix, TimeGrid, Vector};
use crate::stl::{Signal, StlError};

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("nominal signal and gain curve use different grids")]
    GridMismatch,
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for EnvelopeError {
    fn from(e: csv::Error) -> Self {
        EnvelopeError::Csv(e.to_string())
    }
}

/// `ξ₀(t_k) = x_e + e^{A t_k}(x0 - x_e)`, by repeated multiplication with `e^{A dt}`.
pub fn nominal_trajectory_about(
    a: &Matrix,
    equilibrium: &Vector,
    x0: &Vector,
    grid: TimeGrid,
) -> Result<Signal, EnvelopeError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare {
            rows: n,
            cols: a.ncols(),
        }
        .into());
    }
    for v in [x0, equilibrium] {
        if v.len() != n {
            return Err(EnvelopeError::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
    }
    let step = linalg::expm(&(a * grid.dt))?;
    let mut z = x0 - equilibrium;
    let mut data = Vec::with_capacity(n * grid.len);
    for k in 0..grid.len {
        if k > 0 {
            z = &step * z;
        }
        data.extend((&z + equilibrium).iter());
    }
    Ok(Signal::from_flat(0.0, grid.dt, n, data)?)
}

/// `ξ₀(t_k) = e^{A t_k} x0`.
pub fn nominal_trajectory(a: &Matrix, x0: &Vector, grid: TimeGrid) -> Result<Signal, EnvelopeError> {
    nominal_trajectory_about(a, &Vector::zeros(x0.len()), x0, grid)
}

/// The family `{ξ̄_ω}` of envelope signals around a nominal trajectory.
#[derive(Debug, Clone)]
pub struct EnvelopeFamily {
    pub nominal: Signal,
    pub gain: GainCurve,
    pub input_map: Option<Matrix>,
    /// `gain[k]·|B_w|`, one `n×m` matrix per grid point.
    channel_gains: Vec<Matrix>,
}

impl EnvelopeFamily {
    pub fn new(nominal: Signal, gain: GainCurve, input_map: Option<Matrix>) -> Result<Self, EnvelopeError> {
        if nominal.len() != gain.grid.len || (nominal.dt - gain.grid.dt).abs() > 1e-12 * gain.grid.dt {
            return Err(EnvelopeError::GridMismatch);
        }
        let n = nominal.dim();
        if gain.dim() != n {
            return Err(EnvelopeError::DimensionMismatch {
                expected: n,
                got: gain.dim(),
            });
        }
        let channel_gains = match &input_map {
            None => gain.gains.clone(),
            Some(b) => {
                if b.nrows() != n {
                    return Err(EnvelopeError::DimensionMismatch {
                        expected: n,
                        got: b.nrows(),
                    });
                }
                let abs_b = linalg::abs(b);
                gain.gains.iter().map(|g| g * &abs_b).collect()
            }
        };
        Ok(Self {
            nominal,
            gain,
            input_map,
            channel_gains,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.nominal.dim()
    }

    pub fn omega_dim(&self) -> usize {
        self.input_map.as_ref().map_or(self.state_dim(), |b| b.ncols())
    }

    pub fn channel_gain(&self, k: usize) -> &Matrix {
        &self.channel_gains[k]
    }

    /// `ξ̄_ω`: `nominal[k] + gain[k]·|B_w|·ω`.
    pub fn evaluate(&self, omega: &[f64]) -> Result<Signal, EnvelopeError> {
        let m = self.omega_dim();
        if omega.len() != m {
            return Err(EnvelopeError::DimensionMismatch {
                expected: m,
                got: omega.len(),
            });
        }
        let mut out = self.nominal.clone();
        let n = self.state_dim();
        for (k, g) in self.channel_gains.iter().enumerate() {
            let row = out.sample_mut(k);
            for i in 0..n {
                let mut acc = 0.0;
                for (j, w) in omega.iter().enumerate() {
                    acc += g[(i, j)] * w;
                }
                row[i] += acc;
            }
        }
        Ok(out)
    }

    /// Lower and upper envelopes `ξ₀ ∓ gain·|B_w|·ε𝟙`.
    pub fn bracket(&self, eps: f64) -> Result<(Signal, Signal), EnvelopeError> {
        let ones = vec![eps; self.omega_dim()];
        let neg: Vec<f64> = ones.iter().map(|v| -v).collect();
        Ok((self.evaluate(&neg)?, self.evaluate(&ones)?))
    }

    /// Lipschitz constant of `ω ↦ ρ(ξ̄_ω)` for a formula with constant `l_psi`.
    pub fn lipschitz_omega(&self, l_psi: f64) -> f64 {
        l_psi * self.channel_gains.iter().map(linalg::norm2).fold(0.0, f64::max)
    }
}

/// `L_ω = L_ψ · max_t ‖A(t)‖₂`, times `‖|B_w|‖₂` when an input map is present.
pub fn lipschitz_omega(l_psi: f64, gain: &GainCurve, input_map: Option<&Matrix>) -> f64 {
    let b = input_map.map_or(1.0, |b| linalg::norm2(&linalg::abs(b)));
    l_psi * gain.max_norm() * b
}

/// Writes `t,x1,...,xn` rows in full precision.
pub fn write_signal_csv<W: Write>(sig: &Signal, w: W) -> Result<(), EnvelopeError> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=sig.dim()).map(|i| format!("x{i}")));
    wr.write_record(&header)?;
    for (k, s) in sig.samples().enumerate() {
        let mut rec = vec![format!("{:.16e}", sig.time(k))];
        rec.extend(s.iter().map(|v| format!("{v:.16e}")));
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(|e| EnvelopeError::Csv(e.to_string()))?;
    Ok(())
}

/// Reads a signal written by [`write_signal_csv`]; the time column must be uniform.
pub fn read_signal_csv<R: Read>(r: R) -> Result<Signal, EnvelopeError> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    let n = headers.len().saturating_sub(1);
    if headers.get(0).map(str::trim) != Some("t") || n == 0 {
        return Err(EnvelopeError::Csv("header must be `t,x1,...,xn`".into()));
    }
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h.trim() != format!("x{}", i + 1) {
            return Err(EnvelopeError::Csv(format!("unexpected column `{h}`")));
        }
    }
    let mut times = Vec::new();
    let mut data = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != n + 1 {
            return Err(EnvelopeError::Csv(format!("row {} has {} fields", line + 2, rec.len())));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| EnvelopeError::Csv(format!("row {}: bad number `{s}`", line + 2)))
        };
        times.push(parse(&rec[0])?);
        for v in rec.iter().skip(1) {
            data.push(parse(v)?);
        }
    }
    if times.is_empty() {
        return Err(EnvelopeError::Csv("no samples".into()));
    }
    let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
    if !(dt > 0.0) {
        return Err(EnvelopeError::Csv("time column must increase".into()));
    }
    for (k, t) in times.iter().enumerate() {
        if (t - (times[0] + k as f64 * dt)).abs() > 1e-6 * dt {
            return Err(EnvelopeError::Csv(format!("non-uniform time at row {}", k + 2)));
        }
    }
    Ok(Signal::from_flat(times[0], dt, n, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{decompose, jordan_gain};
    use approx::assert_relative_eq;

    fn scalar_family(dt: f64, len: usize) -> EnvelopeFamily {
        let a = Matrix::from_element(1, 1, -1.0);
        let grid = TimeGrid::new(dt, len).unwrap();
        let nominal = nominal_trajectory(&a, &Vector::from_element(1, 1.0), grid).unwrap();
        let gain = jordan_gain(&decompose(&a).unwrap(), grid).unwrap();
        EnvelopeFamily::new(nominal, gain, None).unwrap()
    }

    #[test]
    fn scalar_nominal_decay() {
        let fam = scalar_family(0.01, 101);
        assert_eq!(fam.nominal.sample(0), &[1.0]);
        assert_relative_eq!(fam.nominal.sample(100)[0], (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn nominal_drift_against_direct_expm() {
        let a = Matrix::from_row_slice(2, 2, &[-2.0, -0.02, 1.0, -10.0]);
        let x0 = Vector::from_vec(vec![0.4, 0.4]);
        let grid = TimeGrid::spanning(20.0, 0.01).unwrap();
        let sig = nominal_trajectory(&a, &x0, grid).unwrap();
        let direct = linalg::expm(&(&a * grid.t_end())).unwrap() * &x0;
        let last = Vector::from_column_slice(sig.sample(grid.len - 1));
        assert!((&last - &direct).norm() <= 1e-8 * direct.norm().max(1e-300) + 1e-20);
        assert!(last.norm() < x0.norm());
    }

    #[test]
    fn zero_omega_is_nominal() {
        let fam = scalar_family(0.1, 11);
        assert_eq!(fam.evaluate(&[0.0]).unwrap(), fam.nominal);
    }

    #[test]
    fn scalar_envelope_value() {
        let fam = scalar_family(0.01, 101);
        let x = fam.evaluate(&[0.1]).unwrap();
        assert_relative_eq!(x.sample(100)[0], 0.431091, epsilon = 1e-6);
        assert!(matches!(
            fam.evaluate(&[0.1, 0.2]),
            Err(EnvelopeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lipschitz_omega_examples() {
        let a = Matrix::from_element(1, 1, -1.0);
        let grid = TimeGrid::new(1.0, 60).unwrap();
        let gain = jordan_gain(&decompose(&a).unwrap(), grid).unwrap();
        assert_relative_eq!(lipschitz_omega(1.0, &gain, None), 1.0, epsilon = 1e-12);
        assert_eq!(lipschitz_omega(0.0, &gain, None), 0.0);
    }

    #[test]
    fn input_map_scales_envelope() {
        let a = Matrix::from_element(1, 1, -1.0);
        let grid = TimeGrid::new(0.5, 3).unwrap();
        let nominal = nominal_trajectory(&a, &Vector::from_element(1, 0.0), grid).unwrap();
        let gain = jordan_gain(&decompose(&a).unwrap(), grid).unwrap();
        let b = Matrix::from_element(1, 1, -0.5);
        let fam = EnvelopeFamily::new(nominal, gain.clone(), Some(b.clone())).unwrap();
        let x = fam.evaluate(&[2.0]).unwrap();
        assert_relative_eq!(x.sample(2)[0], 1.0 - (-1.0f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(
            fam.lipschitz_omega(2.0),
            lipschitz_omega(2.0, &gain, Some(&b)),
            epsilon = 1e-14
        );
    }

    #[test]
    fn csv_round_trip_and_schema() {
        let fam = scalar_family(0.25, 5);
        let mut buf = Vec::new();
        write_signal_csv(&fam.nominal, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1\n"));
        let back = read_signal_csv(buf.as_slice()).unwrap();
        assert_eq!(back.as_flat(), fam.nominal.as_flat());
        assert!(read_signal_csv("t,y\n0,1\n".as_bytes()).is_err());
        assert!(read_signal_csv("t,x1\n0,1\n1,1\n3,1\n".as_bytes()).is_err());
    }
}
