use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use exp_sq_core::lattice::{apply_linv, Field};
use exp_sq_core::noise::{sample_white_noise, wick_exponential};
use exp_sq_core::pipeline::draw_sample;
use exp_sq_core::solver::{solve_phibar, ModelParams, SolveOptions};
use exp_sq_core::{LatticeConfig, MollifierSpec, RngStream, SymbolMode};

fn lat(n: usize) -> LatticeConfig {
    LatticeConfig::new(2, n, n as f64 / 8.0, 1.0, SymbolMode::DiscreteLaplacian).unwrap()
}

fn bench_spectral(c: &mut Criterion) {
    let mut group = c.benchmark_group("resolvent");
    for n in [64usize, 128, 256] {
        let lat = lat(n);
        let f = sample_white_noise(&lat, RngStream::new(1, 0));
        group.bench_with_input(BenchmarkId::from_parameter(n), &f, |b, f| {
            b.iter(|| apply_linv(f).unwrap())
        });
    }
    group.finish();
}

fn bench_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("nonlinear_solve");
    group.sample_size(10);
    for &alpha in &[1.0, 4.0] {
        let lat = lat(128);
        let moll = MollifierSpec::new(0.5);
        let params = ModelParams::for_lattice(&lat, &moll, alpha, 40.0).unwrap();
        let bundle =
            exp_sq_core::NoiseBundle::sample(&lat, &moll, RngStream::new(2, 0)).unwrap();
        let (eta, _) = wick_exponential(&bundle.x_eps, alpha, params.c_eps);
        group.bench_with_input(
            BenchmarkId::from_parameter(alpha),
            &(eta, params),
            |b, (eta, params)| b.iter(|| solve_phibar(eta, params).unwrap()),
        );
    }
    group.finish();
}

fn bench_full_sample(c: &mut Criterion) {
    let mut group = c.benchmark_group("full_sample");
    group.sample_size(10);
    let lat = lat(256);
    let moll = MollifierSpec::new(0.5);
    let params = ModelParams::for_lattice(&lat, &moll, 4.0, 40.0).unwrap();
    let opts = SolveOptions::default();
    let mut stream = 0u64;
    group.bench_function("d2_n256_alpha4", |b| {
        b.iter(|| {
            stream += 1;
            draw_sample(&lat, &moll, &params, RngStream::new(3, stream), &opts).unwrap()
        })
    });
    group.finish();
    // keep the optimizer honest about the field type
    let _ = Field::zeros(&lat);
}

criterion_group!(benches, bench_spectral, bench_solve, bench_full_sample);
criterion_main!(benches);
