use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use num_complex::Complex64;
use torobs_core::{evolve_nls, NonlinearitySpec, SpectralField, TorusGeometry};

fn smooth_field(n: usize) -> SpectralField {
    let geom = TorusGeometry::line(n).unwrap();
    let samples: Vec<Complex64> = (0..n)
        .map(|j| {
            let x = geom.grid_point(j)[0];
            Complex64::new(0.5 * x.sin() + 0.2 * (3.0 * x).cos(), 0.1 * (2.0 * x).sin())
        })
        .collect();
    SpectralField::to_spectral(&geom, &samples).unwrap()
}

fn bench_transforms(c: &mut Criterion) {
    for n in [64usize, 256] {
        let u = smooth_field(n);
        c.bench_function(&format!("physical round trip n={n}"), |b| {
            b.iter(|| {
                let phys = black_box(&u).to_physical();
                SpectralField::to_spectral(u.geometry(), &phys).unwrap()
            })
        });
    }
}

fn bench_nonlinearity(c: &mut Criterion) {
    let u = smooth_field(64);
    let cubic = NonlinearitySpec::cubic();
    c.bench_function("cubic eval_f n=64", |b| {
        b.iter(|| cubic.eval_f(black_box(&u)))
    });
    let quintic = NonlinearitySpec::quintic();
    c.bench_function("quintic eval_f n=64 (padded)", |b| {
        b.iter(|| quintic.eval_f(black_box(&u)))
    });
}

fn bench_nls_flow(c: &mut Criterion) {
    let u = smooth_field(64);
    let cubic = NonlinearitySpec::cubic();
    c.bench_function("evolve_nls t=0.1 dt=1e-3 n=64", |b| {
        b.iter(|| evolve_nls(black_box(&u), &cubic, 0.1, 1e-3).unwrap())
    });
}

criterion_group!(
    benches,
    bench_transforms,
    bench_nonlinearity,
    bench_nls_flow
);
criterion_main!(benches);
