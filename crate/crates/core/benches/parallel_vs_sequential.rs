//! Compares the rayon data-parallel paths against explicit sequential
//! equivalents on the three hot loops: chain sweeps over sample batches,
//! per-sample cluster decomposition, and per-sample divergence-form solves.
//!
//! Run with `cargo bench -p sos-lab`. Without the `parallel` feature the
//! "parallel" cases degrade to the sequential implementation, so the
//! comparison also documents the fallback overhead.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use sos_lab::clt;
use sos_lab::exec;
use sos_lab::field::{TauField, TestVectorField};
use sos_lab::percolation::decompose_clusters;
use sos_lab::sampler::{collect_samples, SamplerConfig, SamplerKind};

fn fixture_samples(n: usize, half_side: i64) -> Vec<TauField> {
    let config = SamplerConfig {
        dim: 2,
        delta: 0.0,
        half_side,
        seed: 17,
        burn_in: 20,
        thinning: 1,
        n_samples: n,
        kind: SamplerKind::JointAlternating,
    };
    collect_samples(&config, 4)
        .expect("bench fixture")
        .into_iter()
        .map(|(_, tau)| tau)
        .collect()
}

fn chain_config(n_samples: usize) -> SamplerConfig {
    SamplerConfig {
        dim: 2,
        delta: 0.0,
        half_side: 16,
        seed: 3,
        burn_in: 10,
        thinning: 1,
        n_samples,
        kind: SamplerKind::JointAlternating,
    }
}

fn bench_chain_batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("chain_batch_16_samples_L16");
    group.sample_size(10);
    group.bench_function("parallel_chains", |b| {
        b.iter(|| {
            let out = sos_lab::sampler::run_map(&chain_config(16), 4, |_, _, tau| {
                tau.tau.iter().sum::<f64>()
            })
            .unwrap();
            criterion::black_box(out)
        })
    });
    group.bench_function("sequential_chain", |b| {
        b.iter(|| {
            let out = sos_lab::sampler::run_map(&chain_config(16), 1, |_, _, tau| {
                tau.tau.iter().sum::<f64>()
            })
            .unwrap();
            criterion::black_box(out)
        })
    });
    group.finish();
}

fn bench_cluster_decomposition(c: &mut Criterion) {
    let samples = fixture_samples(32, 24);
    let mut group = c.benchmark_group("cluster_decomposition_32xL24");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter_batched(
            || samples.clone(),
            |batch| {
                let counts = exec::par_map(&batch, |tau| {
                    decompose_clusters(tau, 3.0).unwrap().clusters.len()
                });
                criterion::black_box(counts)
            },
            BatchSize::LargeInput,
        )
    });
    group.bench_function("sequential", |b| {
        b.iter_batched(
            || samples.clone(),
            |batch| {
                let counts = exec::seq_map(&batch, |tau| {
                    decompose_clusters(tau, 3.0).unwrap().clusters.len()
                });
                criterion::black_box(counts)
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn bench_divergence_solves(c: &mut Criterion) {
    let samples = fixture_samples(16, 24);
    let f = TestVectorField::poly_bump(2, 3.0);
    let mut group = c.benchmark_group("divergence_solves_16xL24");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let vals = exec::par_map(&samples, |tau| {
                clt::lattice_energy_value(tau, &f).unwrap()
            });
            criterion::black_box(vals)
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let vals = exec::seq_map(&samples, |tau| {
                clt::lattice_energy_value(tau, &f).unwrap()
            });
            criterion::black_box(vals)
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_chain_batch,
    bench_cluster_decomposition,
    bench_divergence_solves
);
criterion_main!(benches);
