use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use padic_msymb::classical::{HeckeOp, ManinBasis, Mat2};
use padic_msymb::dist::{action_matrix, SigmaMatrix};
use padic_msymb::family::family_action_matrices;
use padic_msymb::ovsymb::{random_symbol, OcSpace};
use padic_msymb::Zmod;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_action_matrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("action_matrix");
    let g = SigmaMatrix::new(5, Mat2::new(3, 7, 10, 29)).unwrap();
    for m in [10usize, 18, 25] {
        let z = Zmod::new(5, m as u32).unwrap();
        group.bench_with_input(BenchmarkId::new("p5_weight0", m), &m, |b, &m| {
            b.iter(|| action_matrix(&z, 0, black_box(&g), m).unwrap())
        });
    }
    let z = Zmod::new(5, 20).unwrap();
    group.bench_function("family_p5_m20_d3", |b| b.iter(|| family_action_matrices(&z, 0, black_box(&g), 20, 3).unwrap()));
    group.finish();
}

fn bench_up_apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("up_apply");
    group.sample_size(20);
    for (n, p, m) in [(11u64, 3u64, 12usize), (11, 3, 24), (32, 5, 12)] {
        let space = OcSpace::new(ManinBasis::new(n, p).unwrap(), 0, m).unwrap();
        let phi = random_symbol(&space, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // the first application builds and caches the operator
        phi.hecke(HeckeOp::Up).unwrap();
        group.bench_function(format!("N{n}_p{p}_M{m}"), |b| b.iter(|| black_box(&phi).hecke(HeckeOp::Up).unwrap()));
    }
    group.finish();
}

criterion_group!(kernels, bench_action_matrix, bench_up_apply);
criterion_main!(kernels);
