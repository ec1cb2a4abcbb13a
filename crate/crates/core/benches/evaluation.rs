use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use prophet_lab::evaluation::{evaluate_exact_with, evaluate_monte_carlo_with, EvalOptions};
use prophet_lab::exec::Execution;
use prophet_lab::instances::{gen_example2, random_instance, RandomFamily, RandomSpec};
use prophet_lab::policies::{eor_threshold, half_expected_max};

const BACKENDS: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn monte_carlo(c: &mut Criterion) {
    let inst = gen_example2(20).unwrap();
    let policy = half_expected_max(&inst).unwrap();
    let mut group = c.benchmark_group("monte_carlo_50k");
    group.sample_size(10);
    for (name, exec) in BACKENDS {
        let opts = EvalOptions { exec, ..EvalOptions::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_monte_carlo_with(black_box(&inst), &policy, 50_000, 7, &opts).unwrap())
        });
    }
    group.finish();
}

fn exact(c: &mut Criterion) {
    let inst = random_instance(11, &RandomSpec::new(RandomFamily::Single, 8, 8, 4));
    let policy = eor_threshold(&inst).unwrap();
    let mut group = c.benchmark_group("exact_enumerated");
    group.sample_size(10);
    for (name, exec) in BACKENDS {
        let opts = EvalOptions { exec, structured: false, ..EvalOptions::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_exact_with(black_box(&inst), &policy, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, monte_carlo, exact);
criterion_main!(benches);
