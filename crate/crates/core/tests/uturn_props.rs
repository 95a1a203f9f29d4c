mod common;

use proptest::prelude::*;
use uturnlab::gaussmodel::{in_position_shell, in_velocity_set, sample_phase_point, ShellSpec};
use uturnlab::rng::task_rng;
use uturnlab::uturn::{delta_bound, f_unif, uturn_diagnostic};
use uturnlab::{FlowVariant, PhasePoint, ScaleBlockTarget, TimeStamp};

fn deviation_check(t: &ScaleBlockTarget, flow: FlowVariant, grid: &[TimeStamp], seed: u64) -> (usize, f64) {
    let shell = ShellSpec::standard(t);
    let hbar = flow.hbar();
    let delta = delta_bound(t, &shell, hbar).unwrap();
    let time = |s: &TimeStamp| match (*s, flow) {
        (TimeStamp::Time(x), _) => x,
        (TimeStamp::Index(i), FlowVariant::Leapfrog { h }) => i as f64 * h,
        (TimeStamp::Index(_), FlowVariant::Exact) => unreachable!(),
    };
    let mut rng = task_rng(seed, 0);
    let mut kept = 0;
    let mut worst = 0.0f64;
    while kept < 1000 {
        let p = sample_phase_point(t, &mut rng);
        if !(in_position_shell(t, &p.x, &shell).unwrap() && in_velocity_set(t, &p.x, &p.v, &shell).unwrap()) {
            continue;
        }
        kept += 1;
        for (i, lo) in grid.iter().enumerate() {
            for hi in &grid[i..] {
                let f = uturn_diagnostic(t, &p, *lo, *hi, flow).unwrap();
                let u = f_unif(t, hbar, time(hi) - time(lo)).unwrap();
                worst = worst.max((f - u).abs() / delta);
            }
        }
    }
    (kept, worst)
}

#[test]
fn deviation_inequality_holds_in_the_shells() {
    let exact_grid: Vec<TimeStamp> = (-4..=4).map(|i| TimeStamp::Time(0.4 * i as f64)).collect();
    let h = 0.02;
    let lf_grid: Vec<TimeStamp> = (-4..=4).map(|i| TimeStamp::Index(20 * i)).collect();
    for t in [
        ScaleBlockTarget::isotropic(1.0, 100).unwrap(),
        ScaleBlockTarget::two_scale(1.0, 100.0, 100, 400).unwrap(),
    ] {
        let (n, w) = deviation_check(&t, FlowVariant::Exact, &exact_grid, 1);
        assert!(n >= 1000 && w <= 1.0, "exact flow: |f - f_unif| / delta reached {w}");
        let (n, w) = deviation_check(&t, FlowVariant::Leapfrog { h }, &lf_grid, 2);
        assert!(n >= 1000 && w <= 1.0, "leapfrog: |f - f_unif| / delta reached {w}");
    }
}

/// A Householder reflection of block `b` of both x and v.
fn reflect(t: &ScaleBlockTarget, p: &PhasePoint, b: usize, u: &[f64]) -> PhasePoint {
    let r = t.range(b);
    let nu: f64 = u.iter().map(|a| a * a).sum();
    let mut q = p.clone();
    for z in [&mut q.x, &mut q.v] {
        let dot: f64 = z[r.clone()].iter().zip(u).map(|(a, c)| a * c).sum();
        for (zj, uj) in z[r.clone()].iter_mut().zip(u) {
            *zj -= 2.0 * dot / nu * uj;
        }
    }
    q
}

proptest! {
    #[test]
    fn diagnostic_is_rotation_invariant(
        seed in 0u64..1000,
        u in prop::collection::vec(0.1f64..1.0, 5),
        lo in -3.0f64..0.0,
        hi in 0.0f64..3.0,
    ) {
        let t = ScaleBlockTarget::two_scale(1.0, 9.0, 5, 3).unwrap();
        let p = sample_phase_point(&t, &mut task_rng(seed, 0));
        let q = reflect(&t, &p, 0, &u);
        let (a, b) = (TimeStamp::Time(lo), TimeStamp::Time(hi));
        let f = uturn_diagnostic(&t, &p, a, b, FlowVariant::Exact).unwrap();
        let g = uturn_diagnostic(&t, &q, a, b, FlowVariant::Exact).unwrap();
        prop_assert!((f - g).abs() <= 1e-10 * (1.0 + f.abs()));
    }

    #[test]
    fn f_unif_matches_oracle(
        b in prop::collection::vec((0.01f64..100.0, 1usize..50), 1..4),
        dt in -10.0f64..10.0,
    ) {
        let t = ScaleBlockTarget::new(b.iter().map(|&(m, d)| uturnlab::Block { m, d }).collect()).unwrap();
        let blocks: common::Blocks = t.blocks().iter().map(|b| (b.m, b.d)).collect();
        let scale = t.trace_sqrt_cov();
        prop_assert!((f_unif(&t, 0.0, dt).unwrap() - common::f_unif_exact(&blocks, dt)).abs() <= 1e-12 * scale);
        let h = 0.5 / t.m_max().sqrt();
        let n = (dt / h).round();
        prop_assert!(
            (f_unif(&t, h, n * h).unwrap() - common::f_unif_leapfrog(&blocks, h, n)).abs() <= 1e-9 * scale
        );
        prop_assert!(f_unif(&t, 0.0, dt).unwrap().abs() <= scale * (1.0 + 1e-12));
    }
}
