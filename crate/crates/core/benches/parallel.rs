use std::hint::black_box;

use binned_gp::gp::{build_gram_with, BinnedDataset};
use binned_gp::polytope::{cov_points_with, sample_points, Polytope};
use binned_gp::{Execution, Hyperparameters, Hyperrectangle};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn gram(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hp = Hyperparameters::new(1.0, vec![1.5, 2.0], 0.1).unwrap();
    let mut group = c.benchmark_group("gram_assembly");
    for n in [100, 400] {
        let regions: Vec<Hyperrectangle> = (0..n)
            .map(|_| {
                let (x, y) = (rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
                Hyperrectangle::from_bounds(&[(x, x + 1.0), (y, y + 1.0)]).unwrap()
            })
            .collect();
        let data = BinnedDataset::from_regions(regions, vec![0.0; n]).unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &data, |b, d| {
                b.iter(|| build_gram_with(black_box(d), &hp, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn point_clouds(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hp = Hyperparameters::new(1.0, vec![1.0, 1.0], 0.0).unwrap();
    let tri = Polytope::convex_polygon(&[[0.0, 0.0], [2.0, 0.0], [0.5, 1.5]]).unwrap();
    let sq = Polytope::convex_polygon(&[[1.0, 1.0], [3.0, 1.0], [3.0, 3.0], [1.0, 3.0]]).unwrap();
    let mut group = c.benchmark_group("cov_points");
    for n in [256, 2048] {
        let a = sample_points(&tri, n, &mut rng).unwrap();
        let b = sample_points(&sq, n, &mut rng).unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &(&a, &b), |bench, (a, b)| {
                bench.iter(|| cov_points_with(black_box(a), black_box(b), &hp, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, gram, point_clouds);
criterion_main!(benches);
