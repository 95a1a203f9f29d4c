mod common;

use proptest::prelude::*;
use uturnlab::gaussmodel::sample_phase_point;
use uturnlab::lab::mixing::{sample_experiment, SampleConfig};
use uturnlab::lab::{FlowKind, KernelSpec};
use uturnlab::nuts::{build_orbit, build_orbit_with, nuts_transition_with, Backend};
use uturnlab::rng::task_rng;
use uturnlab::{Block, Execution, OrbitParams, ScaleBlockTarget, StopReason, TargetSpec};

fn target_strategy() -> impl Strategy<Value = ScaleBlockTarget> {
    prop::collection::vec((0.1f64..50.0, 1usize..40), 1..4)
        .prop_map(|b| ScaleBlockTarget::new(b.into_iter().map(|(m, d)| Block { m, d }).collect()).unwrap())
}

proptest! {
    #[test]
    fn orbits_are_dyadic_and_contain_zero(
        t in target_strategy(),
        hs in 0.05f64..1.5,
        k_max in 0u32..9,
        leapfrog in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let h = hs / t.m_max().sqrt();
        let params = if leapfrog {
            OrbitParams::leapfrog(h, k_max).unwrap()
        } else {
            OrbitParams::exact(h, k_max).unwrap()
        };
        let mut rng = task_rng(seed, 0);
        let p = sample_phase_point(&t, &mut rng);
        let tr = build_orbit(&t, &p, &params, &mut rng).unwrap();
        prop_assert!(tr.orbit.contains(0));
        prop_assert!(tr.len().is_power_of_two());
        prop_assert!(tr.len() <= 1usize << k_max);
        if tr.stop == StopReason::KmaxReached {
            prop_assert_eq!(tr.len(), 1usize << k_max);
        }
        if tr.len() < 1usize << k_max {
            prop_assert!(tr.stop != StopReason::KmaxReached);
        }
        prop_assert_eq!(tr.energy_errors.len(), tr.len());
        let a = tr.uniform_part_probability();
        prop_assert!(a > 0.0 && a <= 1.0 + 1e-12);
    }

    #[test]
    fn gram_and_direct_backends_agree(
        t in target_strategy(),
        hs in 0.05f64..1.5,
        leapfrog in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let h = hs / t.m_max().sqrt();
        let params = if leapfrog {
            OrbitParams::leapfrog(h, 7).unwrap()
        } else {
            OrbitParams::exact(h, 7).unwrap()
        };
        let x = sample_phase_point(&t, &mut task_rng(seed, 2)).x;
        let a = nuts_transition_with(&t, &x, &params, Backend::Gram, &mut task_rng(seed, 3)).unwrap();
        let b = nuts_transition_with(&t, &x, &params, Backend::Direct, &mut task_rng(seed, 3)).unwrap();
        prop_assert_eq!(a.trace.orbit, b.trace.orbit);
        prop_assert_eq!(a.trace.stop, b.trace.stop);
        prop_assert_eq!(a.iota, b.iota);
        for (u, w) in a.trace.energy_errors.iter().zip(&b.trace.energy_errors) {
            prop_assert!((u - w).abs() <= 1e-9 * (1.0 + u.abs()));
        }
    }
}

#[test]
fn short_orbit_example_has_no_uturn() {
    // Orbits spanning a small fraction of a period do not turn back for
    // typical points, so every doubling is accepted.
    let t = ScaleBlockTarget::isotropic(4.0, 10).unwrap();
    let params = OrbitParams::exact(1e-3, 6).unwrap();
    for s in 0..50 {
        let mut rng = task_rng(99, s);
        let p = sample_phase_point(&t, &mut rng);
        let tr = build_orbit_with(&t, &p, &params, Backend::Direct, &mut rng).unwrap();
        assert_eq!(tr.len(), 64);
    }
}

#[test]
fn exact_nuts_preserves_the_target() {
    let kernel = KernelSpec::Nuts {
        h: 0.1,
        k_max: 8,
        flow: FlowKind::Exact,
    };
    let spec = TargetSpec::TwoScale {
        m1: 1.0,
        m2: 25.0,
        d1: 20,
        d2: 20,
    };
    let cfg = SampleConfig::new(spec, kernel, 2000, 50);
    let out = sample_experiment(&cfg, 21, Execution::Parallel).unwrap();
    let rep = out.report();
    for c in &rep.checks {
        assert!(c.passed, "{c:?}");
    }
}
