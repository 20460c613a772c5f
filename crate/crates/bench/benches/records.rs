use criterion::{criterion_group, criterion_main, Criterion};
use kicksim_core::records::{
    ladder_estimate, overshoot_scan, AveragedWalk, Grid, OvershootConfig, StepLaw, GRID_BINS, MIN_RECORDS,
};

fn records(c: &mut Criterion) {
    let walk = AveragedWalk::new(StepLaw::Laplace { scale: 1.0 });
    let grid = Grid::for_scale(walk.scale(), GRID_BINS);
    let mut g = c.benchmark_group("records");
    g.sample_size(10);
    g.bench_function("ladder_10k", |b| b.iter(|| ladder_estimate(&walk, MIN_RECORDS, 3, grid).unwrap()));
    let table = ladder_estimate(&walk, 100_000, 3, grid).unwrap();
    let cfg = OvershootConfig {
        levels: vec![5.0, 50.0],
        samples: 100_000,
        seed: 3,
        resamples: 10,
    };
    g.bench_function("overshoot_two_levels_100k", |b| b.iter(|| overshoot_scan(&table, &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, records);
criterion_main!(benches);
