use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ionprobe::imaging::{extract_string, FitConfig};
use ionprobe::reconstruction::{GridSpec, OffsetConvention, ReconstructionOptions};
use ionprobe::{reconstruct, solve_equilibrium, SolverConfig};
use ionprobe_bench::{equilibrium, frame, harmonic, SIZES};

fn bench_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    let p = harmonic();
    for &n in SIZES {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| solve_equilibrium(&p, n, &SolverConfig::default()).unwrap());
        });
    }
    group.finish();
}

fn bench_reconstruct(c: &mut Criterion) {
    let mut group = c.benchmark_group("reconstruct");
    let options = ReconstructionOptions { grid: GridSpec::Spacing(0.1), offset: OffsetConvention::MinZero };
    for &n in SIZES {
        let s = equilibrium(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| {
            b.iter(|| reconstruct(s, &options).unwrap());
        });
    }
    group.finish();
}

fn bench_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    group.sample_size(20);
    for &n in &SIZES[..3] {
        let f = frame(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &f, |b, f| {
            b.iter(|| extract_string(f, &FitConfig::default()).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, bench_solve, bench_reconstruct, bench_fit);
criterion_main!(benches);
