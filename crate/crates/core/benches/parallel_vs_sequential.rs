//! Same workloads under both execution modes. Without the `parallel` feature
//! both arms run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use enfp_core::gmodel::{bootstrap, FitConfig, ObservationSet};
use enfp_core::posterior::default_z_grid;
use enfp_core::sim::{mixture_prior, validate_bounds, EndpointMix, PolicyKind, PolicySpec, ScenarioConfig};
use enfp_core::trial::FailureRegion;
use enfp_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn scenario() -> ScenarioConfig {
    let mix = |m, failure_type, weight| EndpointMix { m, failure_type, weight };
    ScenarioConfig {
        name: "bench".into(),
        true_prior: mixture_prior(0.2),
        n_trials: 50_000,
        m_distribution: vec![mix(1, FailureRegion::B, 0.4), mix(2, FailureRegion::A, 0.3), mix(3, FailureRegion::B, 0.3)],
        endpoint_correlation: 0.3,
        policy: PolicySpec {
            kind: PolicyKind::SignalConcordant,
            alpha_menu: vec![0.01, 0.025, 0.05],
            signal_noise: 1.0,
            thresholds: None,
        },
        seed: 7,
        replicates: 4,
    }
}

fn simulate(c: &mut Criterion) {
    let cfg = scenario();
    let mut group = c.benchmark_group("validate_bounds");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| validate_bounds(black_box(&cfg), None, None, exec).unwrap()));
    }
    group.finish();
}

fn resample(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = (0..1000)
        .map(|_| {
            let theta = if rng.random_bool(0.1) { -0.5 } else { 2.5 };
            theta + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let obs = ObservationSet::new(z, vec![(-1.96, 1.96); 100]);
    let cfg = FitConfig { grid_step: 0.1, ..FitConfig::default() };
    let grid = default_z_grid();
    let mut group = c.benchmark_group("bootstrap");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| bootstrap(black_box(&obs), &cfg, 16, &grid, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, simulate, resample);
criterion_main!(benches);
