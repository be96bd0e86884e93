use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spfno_core::tensor::Tensor;
use spfno_core::transforms::{forward, forward_nd, inverse, BasisKind};

const BASES: [BasisKind; 3] = [BasisKind::Cosine, BasisKind::Sine, BasisKind::Waws];

fn samples(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn one_dimensional(c: &mut Criterion) {
    for basis in BASES {
        let mut group = c.benchmark_group(format!("{}_1d", basis.name()));
        for p in [8, 12, 16] {
            let n = (1 << p) + 1;
            let f = samples(n, p as u64);
            let coeffs = forward(&f, basis).unwrap();
            group.throughput(Throughput::Elements(n as u64));
            group.bench_with_input(BenchmarkId::new("forward", n), &f, |b, f| b.iter(|| forward(f, basis).unwrap()));
            group.bench_with_input(BenchmarkId::new("inverse", n), &coeffs, |b, c| {
                b.iter(|| inverse(c, n).unwrap())
            });
        }
        group.finish();
    }
}

fn two_dimensional(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_2d_b8");
    for n in [33, 65, 129] {
        let field = Tensor::new(vec![8, n, n, 4], samples(8 * n * n * 4, n as u64)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &field, |b, f| {
            b.iter(|| forward_nd(f, &[BasisKind::Cosine, BasisKind::Sine]).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, one_dimensional, two_dimensional);
criterion_main!(benches);
