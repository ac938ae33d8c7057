use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DMatrix;
use resilience_cli::commands;
use resilience_cli::Problem;
use resilience_core::linalg::{self, GainKind, TimeGrid};
use resilience_core::{cover_samples, scenario_eta, stl};

fn problem(name: &str) -> Problem {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}.json"));
    Problem::load(&path).expect("bundled config")
}

fn dc_motor() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[-2.0, -0.02, 1.0, -10.0])
}

fn gains(c: &mut Criterion) {
    let a = dc_motor();
    let grid = TimeGrid::spanning(20.0, 0.01).unwrap();
    c.bench_function("expm 6x6", |b| {
        let m = DMatrix::from_fn(6, 6, |i, j| if i == j { -1.0 } else { 0.1 * (i as f64 - j as f64) });
        b.iter(|| linalg::expm(black_box(&m)).unwrap())
    });
    for kind in [GainKind::Jordan, GainKind::Absolute, GainKind::Gronwall] {
        c.bench_function(&format!("{kind} gain, DC motor, 2001 steps"), |b| {
            b.iter(|| linalg::gain_curve(black_box(&a), kind, grid).unwrap())
        });
    }
}

fn robustness(c: &mut Criterion) {
    let p = problem("dcmotor_psi1");
    let fam = p
        .linear_system()
        .envelope_family(&p.x0, p.grid, GainKind::Jordan)
        .unwrap();
    let sig = fam.evaluate(&[0.05, -0.05]).unwrap();
    c.bench_function("robustness, DC motor psi1", |b| {
        b.iter(|| stl::robustness(black_box(&p.phi), black_box(&sig), 0.0).unwrap())
    });
    let samples = cover_samples(0.2, 0.01, 2, 100_000).unwrap();
    let mut group = c.benchmark_group("scenario");
    group.sample_size(10);
    group.bench_function(format!("eta over {} samples, DC motor psi1", samples.len()), |b| {
        b.iter(|| scenario_eta(&p.phi, &fam, black_box(&samples)).unwrap())
    });
    group.finish();
}

fn analyze(c: &mut Criterion) {
    let mut group = c.benchmark_group("analyze");
    group.sample_size(10);
    for name in ["scalar", "dcmotor_psi2", "temperature"] {
        let p = problem(name);
        group.bench_function(name, |b| b.iter(|| commands::analyze(&p, GainKind::Jordan).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, gains, robustness, analyze);
criterion_main!(benches);
