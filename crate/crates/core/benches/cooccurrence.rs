//! Parallel vs sequential co-occurrence build on synthetic panels.
//!
//! Run with `cargo bench -p asset-embed`. The `parallel` group only
//! appears when the crate is built with the `parallel` feature (default).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use asset_embed::similarity::{build_cooccurrence_serial, WindowConfig};
use asset_embed::testkit::{generate_factor_panel, FactorModelSpec};

fn bench_builds(c: &mut Criterion) {
    let mut group = c.benchmark_group("cooccurrence");
    group.sample_size(10);
    for &(blocks, per_block, days) in &[(3usize, 10usize, 250usize), (4, 15, 500)] {
        let spec = FactorModelSpec {
            num_blocks: blocks,
            assets_per_block: per_block,
            num_days: days,
            factor_vol: 0.01,
            idio_vol: 0.005,
            cross_block_correlation: 0.0,
            seed: 7,
        };
        let panel = generate_factor_panel(&spec).unwrap();
        let config = WindowConfig::new(22, 5, 5);
        let label = format!("{}x{}", blocks * per_block, days);

        group.bench_with_input(BenchmarkId::new("serial", &label), &panel, |b, panel| {
            b.iter(|| build_cooccurrence_serial(panel, &config).unwrap())
        });

        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", &label), &panel, |b, panel| {
            b.iter(|| asset_embed::similarity::build_cooccurrence(panel, &config).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_builds);
criterion_main!(benches);
