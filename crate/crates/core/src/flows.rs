//! Exact Hamiltonian flow, closed-form leapfrog flow and energies.
//!
//! On a scale-block target both flows act on each coordinate of block `i`
//! through the same 2x2 matrix, so a flow evaluation only needs one
//! [`BlockMap`] per block. For the leapfrog integrator with step `h` and
//! `n` steps that matrix is
//!
//! ```text
//! [ cos(th)                     sin(th) / (g sqrt(m)) ]      th = beta(h^2 m) sqrt(m) h n
//! [ -sin(th) g sqrt(m)          cos(th)               ]      g  = (1 - h^2 m / 4)^{1/2}
//! ```
//!
//! which is the `n`-th power of one velocity-Verlet step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussmodel::{PhasePoint, ScaleBlockTarget, ShellSpec};

/// Below this argument [`beta`] switches to its Taylor series.
const BETA_SERIES_BELOW: f64 = 1e-6;

/// Frequency correction of the leapfrog integrator,
/// `beta(xi) = arccos(1 - xi/2) / sqrt(xi)` on `[0, 4)`.
///
/// Evaluated as `2 asin(sqrt(xi)/2) / sqrt(xi)`, which is the same function
/// without the cancellation in `1 - xi/2` for small `xi`.
pub fn beta(xi: f64) -> Result<f64> {
    if !(0.0..4.0).contains(&xi) {
        return Err(Error::Domain {
            value: xi,
            domain: "[0, 4)",
        });
    }
    if xi < BETA_SERIES_BELOW {
        return Ok(1.0 + xi / 24.0 + 3.0 * xi * xi / 640.0);
    }
    let s = xi.sqrt();
    Ok(2.0 * (0.5 * s).asin() / s)
}

/// `cos(beta(hbar^2 m) t)`: the leapfrog-corrected cosine at stiffness `m`.
pub fn cos_h(hbar: f64, m: f64, t: f64) -> Result<f64> {
    Ok((beta(hbar * hbar * m)? * t).cos())
}

/// `sin(beta(hbar^2 m) t)`.
pub fn sin_h(hbar: f64, m: f64, t: f64) -> Result<f64> {
    Ok((beta(hbar * hbar * m)? * t).sin())
}

/// Which dynamics moves phase points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowVariant {
    Exact,
    Leapfrog { h: f64 },
}

impl FlowVariant {
    /// The step size entering the leapfrog corrections (`0` for the exact flow).
    pub fn hbar(&self) -> f64 {
        match self {
            FlowVariant::Exact => 0.0,
            FlowVariant::Leapfrog { h } => *h,
        }
    }
}

/// A time argument: physical time, or a number of grid steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStamp {
    Time(f64),
    Index(i64),
}

/// Stability class of a leapfrog step on a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    /// `h^2 m_max < 1`: inside the regime the error bounds cover.
    Stable,
    /// `1 <= h^2 m_max < 4`: still stable, but the energy-error and
    /// concentration bounds no longer apply.
    Marginal,
}

/// Check `h^2 m < 4` for every block.
pub fn leapfrog_stability(target: &ScaleBlockTarget, h: f64) -> Result<Stability> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::param("h", format!("step must be positive, got {h}")));
    }
    let m = target.m_max();
    let p = h * h * m;
    if p >= 4.0 {
        return Err(Error::Unstable { h, m, product: p });
    }
    Ok(if p < 1.0 {
        Stability::Stable
    } else {
        Stability::Marginal
    })
}

/// An index grid `h Z` together with the flow used to move along it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    h: f64,
    flow: FlowVariant,
}

impl Grid {
    pub fn exact(h: f64) -> Result<Self> {
        Self::check_h(h)?;
        Ok(Self {
            h,
            flow: FlowVariant::Exact,
        })
    }

    pub fn leapfrog(h: f64) -> Result<Self> {
        Self::check_h(h)?;
        Ok(Self {
            h,
            flow: FlowVariant::Leapfrog { h },
        })
    }

    /// Grid for `flow` with spacing `h`. A leapfrog flow must step by `h`.
    pub fn new(h: f64, flow: FlowVariant) -> Result<Self> {
        match flow {
            FlowVariant::Exact => Self::exact(h),
            FlowVariant::Leapfrog { h: step } => {
                if step != h {
                    return Err(Error::param(
                        "h",
                        format!("grid spacing {h} differs from the leapfrog step {step}"),
                    ));
                }
                Self::leapfrog(h)
            }
        }
    }

    fn check_h(h: f64) -> Result<()> {
        if h.is_finite() && h > 0.0 {
            Ok(())
        } else {
            Err(Error::param("h", format!("step must be positive, got {h}")))
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn flow(&self) -> FlowVariant {
        self.flow
    }

    pub fn hbar(&self) -> f64 {
        self.flow.hbar()
    }

    /// Phase point at grid index `i`.
    pub fn state(&self, target: &ScaleBlockTarget, p: &PhasePoint, i: i64) -> Result<PhasePoint> {
        let prop = Propagator::on_grid(target, self)?;
        prop.apply(target, p, i as f64)
    }
}

/// The linear map `x' = a x + b v`, `v' = c x + e v` of one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMap {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub e: f64,
}

impl BlockMap {
    pub const IDENTITY: BlockMap = BlockMap {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        e: 1.0,
    };
}

#[derive(Debug, Clone, Copy)]
struct Rotation {
    omega: f64,
    bx: f64,
    cx: f64,
}

/// Per-block rotation rates of a flow, with the time unit fixed at
/// construction (physical time for [`Propagator::exact_time`], grid steps for
/// [`Propagator::on_grid`]).
#[derive(Debug, Clone)]
pub struct Propagator {
    rot: Vec<Rotation>,
}

impl Propagator {
    /// Exact flow parametrized by physical time.
    pub fn exact_time(target: &ScaleBlockTarget) -> Self {
        Self {
            rot: target
                .blocks()
                .iter()
                .map(|b| {
                    let w = b.m.sqrt();
                    Rotation {
                        omega: w,
                        bx: 1.0 / w,
                        cx: w,
                    }
                })
                .collect(),
        }
    }

    /// Flow along a grid, parametrized by the step index.
    pub fn on_grid(target: &ScaleBlockTarget, grid: &Grid) -> Result<Self> {
        match grid.flow {
            FlowVariant::Exact => {
                let mut p = Self::exact_time(target);
                for r in &mut p.rot {
                    r.omega *= grid.h;
                }
                Ok(p)
            }
            FlowVariant::Leapfrog { h } => Self::leapfrog_steps(target, h),
        }
    }

    /// Leapfrog flow parametrized by the number of steps.
    pub fn leapfrog_steps(target: &ScaleBlockTarget, h: f64) -> Result<Self> {
        leapfrog_stability(target, h)?;
        let rot = target
            .blocks()
            .iter()
            .map(|b| {
                let xi = h * h * b.m;
                let w = b.m.sqrt();
                let g = (1.0 - 0.25 * xi).sqrt();
                // per-step angle; 2 asin(h w / 2) rounds less than beta(xi) w h
                let omega = if xi < BETA_SERIES_BELOW {
                    beta(xi)? * w * h
                } else {
                    2.0 * (0.5 * h * w).asin()
                };
                Ok(Rotation {
                    omega,
                    bx: 1.0 / (g * w),
                    cx: g * w,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rot })
    }

    pub fn n_blocks(&self) -> usize {
        self.rot.len()
    }

    /// Rotation angle of block `i` after `tau` units.
    pub fn angle(&self, i: usize, tau: f64) -> f64 {
        self.rot[i].omega * tau
    }

    /// Block maps after `tau` units, written into `out`.
    pub fn maps_into(&self, tau: f64, out: &mut [BlockMap]) {
        for (r, m) in self.rot.iter().zip(out.iter_mut()) {
            let (s, c) = (r.omega * tau).sin_cos();
            *m = BlockMap {
                a: c,
                b: s * r.bx,
                c: -s * r.cx,
                e: c,
            };
        }
    }

    pub fn maps(&self, tau: f64) -> Vec<BlockMap> {
        let mut out = vec![BlockMap::IDENTITY; self.rot.len()];
        self.maps_into(tau, &mut out);
        out
    }

    /// Move `p` by `tau` units.
    pub fn apply(&self, target: &ScaleBlockTarget, p: &PhasePoint, tau: f64) -> Result<PhasePoint> {
        target.check_len(p.x.len())?;
        target.check_len(p.v.len())?;
        Ok(apply_maps(target, p, &self.maps(tau)))
    }
}

/// Apply per-block maps to a phase point.
pub fn apply_maps(target: &ScaleBlockTarget, p: &PhasePoint, maps: &[BlockMap]) -> PhasePoint {
    let mut x = vec![0.0; p.x.len()];
    let mut v = vec![0.0; p.v.len()];
    for (i, m) in maps.iter().enumerate() {
        for j in target.range(i) {
            x[j] = m.a * p.x[j] + m.b * p.v[j];
            v[j] = m.c * p.x[j] + m.e * p.v[j];
        }
    }
    PhasePoint { x, v }
}

/// Position part of [`apply_maps`], written into `out`.
pub fn apply_maps_position(target: &ScaleBlockTarget, x: &[f64], v: &[f64], maps: &[BlockMap], out: &mut [f64]) {
    for (i, m) in maps.iter().enumerate() {
        for j in target.range(i) {
            out[j] = m.a * x[j] + m.b * v[j];
        }
    }
}

/// Exact Hamiltonian flow for time `t` (negative `t` runs backwards).
pub fn exact_flow(target: &ScaleBlockTarget, p: &PhasePoint, t: f64) -> Result<PhasePoint> {
    if !t.is_finite() {
        return Err(Error::param("t", "time must be finite"));
    }
    Propagator::exact_time(target).apply(target, p, t)
}

/// `n` leapfrog steps of size `h` in closed form (negative `n` runs backwards).
pub fn leapfrog_flow(target: &ScaleBlockTarget, p: &PhasePoint, h: f64, n: i64) -> Result<PhasePoint> {
    Propagator::leapfrog_steps(target, h)?.apply(target, p, n as f64)
}

/// Number of grid steps corresponding to `t`, if `t` is a grid point.
pub fn steps_for_time(t: f64, h: f64) -> Result<i64> {
    let n = (t / h).round();
    if !(t.is_finite()) || (n * h - t).abs() > 1e-9 * t.abs().max(h) {
        return Err(Error::GridViolation { time: t, h });
    }
    Ok(n as i64)
}

/// Move `p` by a timestamp under `flow`.
pub fn evolve(target: &ScaleBlockTarget, p: &PhasePoint, flow: FlowVariant, at: TimeStamp) -> Result<PhasePoint> {
    match (flow, at) {
        (FlowVariant::Exact, TimeStamp::Time(t)) => exact_flow(target, p, t),
        (FlowVariant::Exact, TimeStamp::Index(_)) => Err(Error::param(
            "time",
            "an index timestamp needs a grid; use a physical time with the exact flow",
        )),
        (FlowVariant::Leapfrog { h }, TimeStamp::Index(n)) => leapfrog_flow(target, p, h, n),
        (FlowVariant::Leapfrog { h }, TimeStamp::Time(t)) => leapfrog_flow(target, p, h, steps_for_time(t, h)?),
    }
}

/// `H(x, v) = sum_i m_i |x^i|^2 / 2 + |v|^2 / 2`.
pub fn hamiltonian(target: &ScaleBlockTarget, p: &PhasePoint) -> Result<f64> {
    target.check_len(p.v.len())?;
    let pot: f64 = target.block_radii(&p.x)?.iter().sum();
    let kin: f64 = p.v.iter().map(|y| y * y).sum();
    Ok(0.5 * (pot + kin))
}

/// The quadratic invariant of the leapfrog map,
/// `H(x, v) - sum_i (h^2 m_i / 8) |m_i^{1/2} x^i|^2`.
pub fn modified_hamiltonian(target: &ScaleBlockTarget, p: &PhasePoint, h: f64) -> Result<f64> {
    let radii = target.block_radii(&p.x)?;
    let corr: f64 = target
        .blocks()
        .iter()
        .zip(&radii)
        .map(|(b, r2)| h * h * b.m / 8.0 * r2)
        .sum();
    Ok(hamiltonian(target, p)? - corr)
}

/// `max_{l in [lo, hi]} |H(Phi^l p) - H(p)|` over a range of leapfrog steps.
pub fn energy_error_max(target: &ScaleBlockTarget, p: &PhasePoint, h: f64, lo: i64, hi: i64) -> Result<f64> {
    if lo > hi {
        return Err(Error::param("range", "empty index range"));
    }
    let prop = Propagator::leapfrog_steps(target, h)?;
    let h0 = hamiltonian(target, p)?;
    let mut worst = 0.0_f64;
    for l in lo..=hi {
        let q = prop.apply(target, p, l as f64)?;
        worst = worst.max((hamiltonian(target, &q)? - h0).abs());
    }
    Ok(worst)
}

/// Bound `h^2 max_i (m_i max(alpha_i, r_i) + h^2 m_i^2 d_i)` on the energy
/// error along leapfrog orbits started in the shells.
pub fn energy_error_bound(target: &ScaleBlockTarget, shell: &ShellSpec, h: f64) -> f64 {
    target
        .blocks()
        .iter()
        .zip(shell.max_radius())
        .map(|(b, mr)| h * h * (b.m * mr + h * h * b.m * b.m * b.d as f64))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn beta_values() {
        assert_eq!(beta(0.0).unwrap(), 1.0);
        assert_relative_eq!(beta(1.0).unwrap(), PI / 3.0, max_relative = 1e-15);
        assert_relative_eq!(beta(2.0).unwrap(), PI / (2.0 * 2f64.sqrt()), max_relative = 1e-15);
        assert!(matches!(beta(4.0), Err(Error::Domain { .. })));
        assert!(beta(-0.1).is_err());
        // continuity across the series switch
        let lo = beta(BETA_SERIES_BELOW * (1.0 - 1e-9)).unwrap();
        let hi = beta(BETA_SERIES_BELOW).unwrap();
        assert_relative_eq!(lo, hi, max_relative = 1e-14);
    }

    #[test]
    fn exact_flow_half_period() {
        let t = ScaleBlockTarget::isotropic(4.0, 1).unwrap();
        let q = exact_flow(&t, &PhasePoint::new(vec![1.0], vec![0.0]), PI / 2.0).unwrap();
        assert_relative_eq!(q.x[0], -1.0, epsilon = 1e-15);
        assert_relative_eq!(q.v[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn leapfrog_single_step() {
        let t = ScaleBlockTarget::isotropic(1.0, 1).unwrap();
        let q = leapfrog_flow(&t, &PhasePoint::new(vec![1.0], vec![0.0]), 1.0, 1).unwrap();
        assert_relative_eq!(q.x[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(q.v[0], -0.75, max_relative = 1e-15);
    }

    #[test]
    fn leapfrog_stability_classes() {
        let t = ScaleBlockTarget::two_scale(1.0, 100.0, 1, 1).unwrap();
        assert_eq!(leapfrog_stability(&t, 0.05).unwrap(), Stability::Stable);
        assert_eq!(leapfrog_stability(&t, 0.15).unwrap(), Stability::Marginal);
        assert!(matches!(leapfrog_stability(&t, 0.2), Err(Error::Unstable { .. })));
    }

    #[test]
    fn modified_hamiltonian_example() {
        let t = ScaleBlockTarget::isotropic(1.0, 1).unwrap();
        let p = PhasePoint::new(vec![1.0], vec![0.0]);
        assert_relative_eq!(modified_hamiltonian(&t, &p, 1.0).unwrap(), 0.375);
        // and it is conserved by the step above
        let q = leapfrog_flow(&t, &p, 1.0, 1).unwrap();
        assert_relative_eq!(modified_hamiltonian(&t, &q, 1.0).unwrap(), 0.375, max_relative = 1e-15);
    }

    #[test]
    fn grid_timestamps() {
        let t = ScaleBlockTarget::isotropic(1.0, 1).unwrap();
        let p = PhasePoint::new(vec![1.0], vec![0.0]);
        let lf = FlowVariant::Leapfrog { h: 0.1 };
        let a = evolve(&t, &p, lf, TimeStamp::Index(3)).unwrap();
        let b = evolve(&t, &p, lf, TimeStamp::Time(0.3)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            evolve(&t, &p, lf, TimeStamp::Time(0.25)),
            Err(Error::GridViolation { .. })
        ));
        assert!(evolve(&t, &p, FlowVariant::Exact, TimeStamp::Index(1)).is_err());
        assert!(Grid::new(0.1, FlowVariant::Leapfrog { h: 0.2 }).is_err());
    }
}
