#![allow(dead_code)]

use nalgebra::DMatrix;
use proptest::prelude::*;

/// Random matrix shifted so its spectral abscissa is at most `-margin`.
pub fn hurwitz(n: usize, entries: &[f64], margin: f64) -> DMatrix<f64> {
    let m = DMatrix::from_row_slice(n, n, &entries[..n * n]);
    let abscissa = m
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    m - DMatrix::identity(n, n) * (abscissa + margin)
}

pub fn hurwitz_strategy(max_n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_n)
        .prop_flat_map(|n| (Just(n), prop::collection::vec(-2.0f64..2.0, n * n), 0.05f64..1.5))
        .prop_map(|(n, e, margin)| hurwitz(n, &e, margin))
}
