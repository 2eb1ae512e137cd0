use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use gtd_bench::problem;
use gtd_core::harness::{run_trial, sample_rng, TrialConfig};
use gtd_core::{AlgorithmSpec, Family, LearnerState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Single updates at the default experiment size (q = 10).
fn single_step(c: &mut Criterion) {
    let pb = problem(100, 10, 10, 0);
    let mut group = c.benchmark_group("step");
    for family in Family::ALL {
        let spec = AlgorithmSpec::reference(family);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let samples: Vec<_> = (0..1024).map(|_| pb.sampler().sample(&mut rng)).collect();
        group.throughput(Throughput::Elements(samples.len() as u64));
        group.bench_function(BenchmarkId::from_parameter(family), |b| {
            b.iter(|| {
                let mut state = LearnerState::zeros(pb.q());
                for s in &samples {
                    spec.step_in_place(&mut state, s, pb.features(), pb.gamma()).unwrap();
                }
                black_box(state)
            })
        });
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let pb = problem(100, 10, 10, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("sample_transition", |b| b.iter(|| black_box(pb.sampler().sample(&mut rng))));
}

// One full ranking trial, the unit of work of the harness.
fn trial(c: &mut Criterion) {
    let mut group = c.benchmark_group("trial");
    group.sample_size(10);
    for (ns, q) in [(20, 2), (100, 10)] {
        let pb = problem(ns, 10, q, 0);
        let spec = AlgorithmSpec::reference(Family::Gtd4);
        let cfg = TrialConfig::new(10_000, 0);
        group.throughput(Throughput::Elements(cfg.tau));
        group.bench_function(BenchmarkId::new("gtd4", format!("{ns}x{q}")), |b| {
            b.iter(|| run_trial(&pb, &spec, &cfg, &mut sample_rng(0, 0)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, single_step, sampling, trial);
criterion_main!(benches);
