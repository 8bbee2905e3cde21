//! Sequential against data-parallel execution of the two hot paths.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use polar_lattice::channel::{build_partition_channel, QuantizerConfig};
use polar_lattice::polar::polarize_with;
use polar_lattice::sim::{simulate_bob, ExperimentConfig};
use polar_lattice::verify::random_layout_spec;
use polar_lattice::{Execution, PartitionChain};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn polarization(c: &mut Criterion) {
    let chain = PartitionChain::new(2.5, 3).unwrap();
    let q = QuantizerConfig::new(64).unwrap();
    let base = build_partition_channel(&chain, 1, 1.0, &q).unwrap();
    let mut group = c.benchmark_group("polarize");
    group.sample_size(10);
    for n_exp in [6u32, 8] {
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, 1 << n_exp), &n_exp, |b, &n_exp| {
                b.iter(|| polarize_with(black_box(&base), n_exp, &q, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = random_layout_spec(&mut rng, 2.5, 1.0, 8, 2, 4).unwrap();
    let mut group = c.benchmark_group("simulate_bob");
    group.sample_size(10);
    for (name, exec) in MODES {
        let mut cfg = ExperimentConfig::new(64, 7);
        cfg.execution = exec;
        group.bench_function(BenchmarkId::new(name, spec.block_length()), |b| {
            b.iter(|| simulate_bob(black_box(&spec), &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, polarization, monte_carlo);
criterion_main!(benches);
