//! Sequential versus parallel execution of the hot loops on the disk loop.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use incdiss::disk::{lti_closed_loop, DiskParameters, DiskScheduling};
use incdiss::embedding::embed_differential_form;
use incdiss::lmi::{li2_problem, li2_solve_options, Backend, InteriorPointBackend, SolveOptions};
use incdiss::sim::{validate_pairs, PairSampler};
use incdiss::{Execution, SupplyQsr};
use nalgebra::DMatrix;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn bench(c: &mut Criterion) {
    let cl = lti_closed_loop(DiskParameters::default()).unwrap();
    let sched = DiskScheduling::for_loop(&cl).unwrap();
    let region = sched.region();

    let mut group = c.benchmark_group("embedding_6x6x6");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| embed_differential_form(&cl, &sched, &region, &[6, 6, 6], exec).unwrap())
        });
    }
    group.finish();

    let emb =
        embed_differential_form(&cl, &sched, &region, &[6, 6, 6], Execution::Parallel).unwrap();
    let gamma = 0.25;
    let mut group = c.benchmark_group("li2_solve_6x6x6");
    group.sample_size(10);
    for (name, exec) in MODES {
        let problem = li2_problem(&emb, gamma, exec).unwrap();
        let opts = li2_solve_options(
            &SolveOptions {
                exec,
                ..SolveOptions::default()
            },
            gamma,
        );
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| InteriorPointBackend.solve(&problem, &opts))
        });
    }
    group.finish();

    let pairs = PairSampler::new(region.clone(), 100)
        .sample(&cl, &sched, 200, 0, Execution::Parallel)
        .unwrap();
    let p = DMatrix::from_row_slice(3, 3, &[4.0, 0.5, 0.1, 0.5, 0.2, 0.0, 0.1, 0.0, 0.01]);
    let supply = SupplyQsr::l2_gain(0.25, 1, 1);
    let mut group = c.benchmark_group("validate_200_pairs");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| validate_pairs(&pairs, &p, &supply, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
