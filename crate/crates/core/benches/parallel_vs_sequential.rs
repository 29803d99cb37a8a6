use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use hvopt::instances::{budget_plane, l0_plane};
use hvopt::lift::{choose_penalty, solve_lifted, LiftOptions};
use hvopt::oracle::{grid_minimize, solve_mpcc_by_enumeration, GridSpec, MpccVariant};
use hvopt::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn grid(c: &mut Criterion) {
    let inst = l0_plane();
    let spec = GridSpec::uniform(2, 201, 1);
    let mut g = c.benchmark_group("grid_minimize");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| grid_minimize(black_box(&inst.problem), &spec, exec).unwrap())
        });
    }
    g.finish();
}

fn enumeration(c: &mut Criterion) {
    let inst = budget_plane();
    let spec = GridSpec::uniform(2, 101, 0);
    let mut g = c.benchmark_group("mpcc_enumeration");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| solve_mpcc_by_enumeration(black_box(&inst.problem), MpccVariant::OnOff, &spec, exec).unwrap())
        });
    }
    g.finish();
}

fn lifted(c: &mut Criterion) {
    let inst = budget_plane();
    let lambda = choose_penalty(&inst.problem, 2.0, 0).unwrap().lambda;
    let mut g = c.benchmark_group("solve_lifted");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = LiftOptions { exec, ..LiftOptions::default() };
        g.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| solve_lifted(black_box(&inst.problem), lambda, opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, grid, enumeration, lifted);
criterion_main!(benches);
