use std::hint::black_box;

use bdris_bench::{scenario, terms};
use bdris_core::architecture::init_no_mc;
use bdris_core::em::{mutual_impedance, QuadratureSettings};
use bdris_core::linalg::DEFAULT_RCOND_THRESHOLD;
use bdris_core::optimizer::{compute_linearization, Optimizer};
use bdris_core::{OptimizerConfig, RisArchitecture};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn em(c: &mut Criterion) {
    let cfg = scenario(16, 0.125);
    let dipoles = cfg.ris_dipoles().unwrap();
    let constants = cfg.constants().unwrap();
    let q = QuadratureSettings::default();
    c.bench_function("mutual_impedance/adjacent", |b| {
        b.iter(|| mutual_impedance(black_box(&dipoles[0]), black_box(&dipoles[1]), &constants, q).unwrap())
    });
    c.bench_function("mutual_impedance/self", |b| {
        b.iter(|| mutual_impedance(black_box(&dipoles[0]), black_box(&dipoles[0]), &constants, q).unwrap())
    });
    let mut group = c.benchmark_group("build_scenario");
    group.sample_size(10);
    group.bench_function("M16", |b| b.iter(|| terms(black_box(16), 0.125)));
    group.finish();
}

fn optimizer(c: &mut Criterion) {
    let mut group = c.benchmark_group("optimizer");
    for m in [16usize, 32] {
        let t = terms(m, 0.125);
        for (label, arch) in [
            ("SC", RisArchitecture::single_connected(m).unwrap()),
            ("GC4", RisArchitecture::with_group_size(m, 4).unwrap()),
            ("FC", RisArchitecture::fully_connected(m).unwrap()),
        ] {
            let z = init_no_mc(&t, arch).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("linearize/{label}"), m), &z, |b, z| {
                b.iter(|| compute_linearization(&t, black_box(z), DEFAULT_RCOND_THRESHOLD).unwrap())
            });
            group.bench_with_input(BenchmarkId::new(format!("step/{label}"), m), &z, |b, z| {
                b.iter_batched(
                    || Optimizer::new(&t, z.clone(), OptimizerConfig::default()).unwrap(),
                    |mut opt| opt.step().unwrap(),
                    criterion::BatchSize::LargeInput,
                )
            });
        }
    }
    group.finish();
}

criterion_group!(benches, em, optimizer);
criterion_main!(benches);
