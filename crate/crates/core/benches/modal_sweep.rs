use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ks_moment::{par, pde_sim, spectrum};

fn eigen_sweep(c: &mut Criterion) {
    let ks: Vec<i64> = (1..=2000).flat_map(|k| [k, -k]).collect();
    let mut g = c.benchmark_group("eigen_sweep");
    let node = |&k: &i64| {
        let n = spectrum::node(k, spectrum::Branch::Plus).unwrap();
        let e = pde_sim::expm2(&pde_sim::forward_matrix(k), 1e-3);
        (n.lambda, e[0][0])
    };
    g.bench_with_input(BenchmarkId::new("par", ks.len()), &ks, |b, ks| b.iter(|| black_box(par::map(ks, node))));
    g.bench_with_input(BenchmarkId::new("seq", ks.len()), &ks, |b, ks| b.iter(|| black_box(par::map_seq(ks, node))));
    g.finish();
}

fn energy_cases(c: &mut Criterion) {
    let seeds: Vec<u64> = (0..8).collect();
    let mut g = c.benchmark_group("energy_cases");
    g.sample_size(10);
    let case = |&s: &u64| pde_sim::energy_case(s, 3, 21).unwrap().ineq0_holds;
    g.bench_with_input(BenchmarkId::new("par", seeds.len()), &seeds, |b, s| b.iter(|| black_box(par::map(s, case))));
    g.bench_with_input(BenchmarkId::new("seq", seeds.len()), &seeds, |b, s| b.iter(|| black_box(par::map_seq(s, case))));
    g.finish();
}

criterion_group!(benches, eigen_sweep, energy_cases);
criterion_main!(benches);
