use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use resilience_core::dynamics::{
    integrate, integrate_with, monte_carlo_validate, DisturbanceKind, DisturbanceSignal, System,
};
use resilience_core::linalg::{expm, TimeGrid};
use resilience_core::stl;

fn dc_motor() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[-2.0, -0.02, 1.0, -10.0])
}

/// `x(t) = e^{At}x0 + A⁻¹(e^{At} − I)·d` for a constant disturbance `d`.
fn closed_form(a: &DMatrix<f64>, x0: &DVector<f64>, d: &DVector<f64>, t: f64) -> DVector<f64> {
    let e = expm(&(a * t)).unwrap();
    let n = a.nrows();
    &e * x0 + a.clone().try_inverse().unwrap() * (e - DMatrix::identity(n, n)) * d
}

fn error_at(dt: f64) -> f64 {
    let a = DMatrix::from_row_slice(2, 2, &[-0.5, -2.0, 2.0, -0.5]);
    let sys = System::linear(a.clone());
    let grid = TimeGrid::spanning(4.0, dt).unwrap();
    let x = integrate(&sys, &[1.0, 0.0], &DisturbanceSignal::zero(2), grid).unwrap();
    let want = closed_form(&a, &DVector::from_vec(vec![1.0, 0.0]), &DVector::zeros(2), grid.t_end());
    let got = x.sample(grid.len - 1);
    (got[0] - want[0]).abs().max((got[1] - want[1]).abs())
}

#[test]
fn rk4_converges_at_fourth_order() {
    let dts = [0.2, 0.1, 0.05, 0.025];
    let errs: Vec<f64> = dts.iter().map(|&dt| error_at(dt)).collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}, errors {errs:?}");
    }
}

#[test]
fn linear_run_matches_nominal_trajectory() {
    let a = dc_motor();
    let grid = TimeGrid::spanning(20.0, 0.01).unwrap();
    let x = integrate(
        &System::linear(a.clone()),
        &[0.4, 0.4],
        &DisturbanceSignal::zero(2),
        grid,
    )
    .unwrap();
    let x0 = DVector::from_vec(vec![0.4, 0.4]);
    let nominal = resilience_core::envelope::nominal_trajectory(&a, &x0, grid).unwrap();
    let (xf, nf) = (x.sample(grid.len - 1), nominal.sample(grid.len - 1));
    for i in 0..2 {
        let rel = (xf[i] - nf[i]).abs() / nf[i].abs();
        assert!(rel <= 1e-6, "x{} relative error {rel:e}", i + 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn constant_disturbance_matches_variation_of_constants(
        d in prop::collection::vec(-1.0f64..1.0, 2),
        x0 in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let a = dc_motor();
        let grid = TimeGrid::spanning(5.0, 0.01).unwrap();
        let flat: Vec<f64> = (0..grid.len).flat_map(|_| d.clone()).collect();
        let x = integrate_with(&System::linear(a.clone()), &x0, &flat, grid).unwrap();
        let want = closed_form(&a, &DVector::from_vec(x0), &DVector::from_vec(d), grid.t_end());
        let got = x.sample(grid.len - 1);
        for i in 0..2 {
            prop_assert!((got[i] - want[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn emitted_disturbances_respect_the_bound(
        kind in prop_oneof![
            Just(DisturbanceKind::PiecewiseConstantRandom),
            Just(DisturbanceKind::Sinusoid),
            Just(DisturbanceKind::BangBangCorner),
            Just(DisturbanceKind::Zero),
        ],
        eps in 0.0f64..10.0,
        hold in 0.01f64..2.0,
        seed in any::<u64>(),
        m in 1usize..5,
    ) {
        let grid = TimeGrid::new(0.01, 400).unwrap();
        let d = DisturbanceSignal::new(kind, eps, hold, seed, m).sample(grid);
        prop_assert_eq!(d.len(), grid.len * m);
        prop_assert!(d.iter().all(|v| v.abs() <= eps));
    }
}

#[test]
fn same_seed_gives_identical_report() {
    let phi = stl::parse("G[0,20](x1 <= 0.5 && x2 <= 0.5)").unwrap();
    let sys = System::linear(dc_motor());
    let grid = TimeGrid::spanning(20.0, 0.01).unwrap();
    let r1 = monte_carlo_validate(&sys, &phi, &[0.4, 0.4], 0.1, 64, 99, grid).unwrap();
    let r2 = monte_carlo_validate(&sys, &phi, &[0.4, 0.4], 0.1, 64, 99, grid).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(r1.worst_robustness.to_bits(), r2.worst_robustness.to_bits());
    let r3 = monte_carlo_validate(&sys, &phi, &[0.4, 0.4], 0.1, 64, 100, grid).unwrap();
    assert_ne!(r1.worst_seed, r3.worst_seed);
}
