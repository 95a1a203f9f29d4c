//! Sequential vs rayon execution of the replica-parallel experiments.
//!
//! With the `parallel` feature off both variants run the same loop.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use uturnlab::hmc::IntegrationTimeLaw;
use uturnlab::lab::contraction::{contraction_experiment, ContractionConfig};
use uturnlab::lab::mixing::{mixing_experiment, MixingConfig};
use uturnlab::lab::orbits::{orbit_statistics_experiment, OrbitStatsConfig};
use uturnlab::lab::{FlowKind, KernelSpec, Start};
use uturnlab::{Execution, TargetSpec};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn two_scale() -> TargetSpec {
    TargetSpec::TwoScale {
        m1: 1.0,
        m2: 400.0,
        d1: 200,
        d2: 200,
    }
}

fn orbits(c: &mut Criterion) {
    let mut g = c.benchmark_group("orbits");
    g.sample_size(10);
    for flow in [FlowKind::Exact, FlowKind::Leapfrog] {
        let cfg = OrbitStatsConfig::new(two_scale(), 0.06, 8, flow, 400);
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, format!("{flow:?}")), &cfg, |b, cfg| {
                b.iter(|| black_box(orbit_statistics_experiment(cfg, 1, exec).unwrap().modal_fraction))
            });
        }
    }
    g.finish();
}

fn mixing(c: &mut Criterion) {
    let mut g = c.benchmark_group("mixing");
    g.sample_size(10);
    let kernel = KernelSpec::Nuts {
        h: 0.06,
        k_max: 8,
        flow: FlowKind::Exact,
    };
    let mut cfg = MixingConfig::new(two_scale(), kernel, 400, 10);
    cfg.start = Start::Zero;
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, 400), &cfg, |b, cfg| {
            b.iter(|| black_box(mixing_experiment(cfg, 2, exec).unwrap().mixing_time))
        });
    }
    g.finish();
}

fn contraction(c: &mut Criterion) {
    let mut g = c.benchmark_group("contraction");
    g.sample_size(10);
    let law = IntegrationTimeLaw::Triangular { h: 0.06, k_star: 6 };
    let cfg = ContractionConfig::new(two_scale(), law, 2000, 5);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, 2000), &cfg, |b, cfg| {
            b.iter(|| black_box(contraction_experiment(cfg, 3, exec).unwrap().mean_ratio))
        });
    }
    g.finish();
}

criterion_group!(benches, orbits, mixing, contraction);
criterion_main!(benches);
