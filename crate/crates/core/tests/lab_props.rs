mod common;

use proptest::prelude::*;
use uturnlab::lab::mixing::{mixing_experiment, MixingConfig};
use uturnlab::lab::{phase_membership, predict_t_star, FlowKind, KernelSpec, Start};
use uturnlab::{Block, Execution, OrbitParams, ScaleBlockTarget, TargetSpec};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn prediction_matches_brute_force_scan(
        b in prop::collection::vec((0.1f64..400.0, 1usize..3000), 1..4),
        hs in 0.01f64..1.0,
        k_max in 0u32..12,
        leapfrog in any::<bool>(),
    ) {
        let t = ScaleBlockTarget::new(b.into_iter().map(|(m, d)| Block { m, d }).collect()).unwrap();
        let blocks: common::Blocks = t.blocks().iter().map(|b| (b.m, b.d)).collect();
        let h = hs / t.m_max().sqrt();
        let (params, oracle) = if leapfrog {
            (
                OrbitParams::leapfrog(h, k_max).unwrap(),
                common::first_negative(h, k_max, |time| common::f_unif_leapfrog(&blocks, h, (time / h).round())),
            )
        } else {
            (
                OrbitParams::exact(h, k_max).unwrap(),
                common::first_negative(h, k_max, |time| common::f_unif_exact(&blocks, time)),
            )
        };
        let p = predict_t_star(&t, &params).unwrap();
        // a sign flip within rounding of zero is not a disagreement
        let near_zero = (1..=k_max).any(|k| {
            let n = ((1u64 << k) - 1) as f64;
            let f = if leapfrog { common::f_unif_leapfrog(&blocks, h, n) } else { common::f_unif_exact(&blocks, h * n) };
            f.abs() < 1e-9 * t.trace_sqrt_cov()
        });
        prop_assume!(!near_zero);
        match oracle {
            Some((k, time)) => {
                prop_assert!(!p.capped);
                prop_assert_eq!(p.k_star, k);
                prop_assert!((p.t_star - time).abs() <= 1e-12 * time);
            }
            None => {
                prop_assert!(p.capped);
                prop_assert_eq!(p.k_star, k_max);
            }
        }
    }
}

proptest! {
    #[test]
    fn phase_membership_is_monotone_in_ratio(
        kappa in 4.0f64..1e4,
        r0 in 0.01f64..50.0,
        factor in 1.0f64..20.0,
    ) {
        let a = phase_membership(kappa, r0).unwrap();
        let b = phase_membership(kappa, r0 * factor).unwrap();
        prop_assert!(a.accelerated || !b.accelerated);
    }
}

#[test]
fn doubling_replicas_does_not_delay_the_estimate() {
    let spec = TargetSpec::Isotropic { m: 1.0, d: 30 };
    let kernel = KernelSpec::Nuts {
        h: 0.3,
        k_max: 6,
        flow: FlowKind::Exact,
    };
    for seed in 0..4 {
        let mut prev: Option<u64> = None;
        for n in [400, 800, 1600, 3200] {
            let mut cfg = MixingConfig::new(spec.clone(), kernel, n, 40);
            cfg.start = Start::Overdispersed;
            cfg.checkpoints = Some((0..=10).map(|i| 4 * i).collect());
            let est = mixing_experiment(&cfg, seed, Execution::Parallel)
                .unwrap()
                .mixing_time_lower_bound();
            if let Some(p) = prev {
                // one checkpoint is 4 transitions
                assert!(
                    est <= p + 4,
                    "seed {seed}: {n} replicas gave {est}, half as many gave {p}"
                );
            }
            prev = Some(est);
        }
    }
}

#[cfg(feature = "parallel")]
#[test]
fn reports_do_not_depend_on_worker_count() {
    use uturnlab::hmc::IntegrationTimeLaw;
    use uturnlab::lab::concentration::{concentration_experiment, ConcentrationConfig};
    use uturnlab::lab::contraction::{contraction_experiment, ContractionConfig};
    use uturnlab::lab::orbits::{orbit_statistics_experiment, OrbitStatsConfig};

    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let two = TargetSpec::TwoScale {
                m1: 1.0,
                m2: 100.0,
                d1: 20,
                d2: 40,
            };
            let conc = concentration_experiment(&ConcentrationConfig::new(two.clone(), 600), 1, Execution::Parallel)
                .unwrap()
                .report();
            let orbits = orbit_statistics_experiment(
                &OrbitStatsConfig::new(two.clone(), 0.05, 8, FlowKind::Leapfrog, 300),
                2,
                Execution::Parallel,
            )
            .unwrap()
            .report();
            let law = IntegrationTimeLaw::Triangular { h: 0.05, k_star: 4 };
            let contr = contraction_experiment(
                &ContractionConfig::new(two.clone(), law, 300, 4),
                3,
                Execution::Parallel,
            )
            .unwrap()
            .report();
            let mix = mixing_experiment(
                &MixingConfig::new(
                    two,
                    KernelSpec::Nuts {
                        h: 0.05,
                        k_max: 8,
                        flow: FlowKind::Exact,
                    },
                    300,
                    10,
                ),
                4,
                Execution::Parallel,
            )
            .unwrap()
            .report();
            [conc, orbits, contr, mix]
                .iter()
                .map(|r| (serde_json::to_string(r).unwrap(), r.tables.clone()))
                .collect::<Vec<_>>()
        })
    };
    let one = run(1);
    assert_eq!(one, run(2));
    assert_eq!(one, run(4));
}
