//! Analytic predictions: the orbit length NUTS selects, the phase diagram of
//! two-scale targets, and the step size used for leapfrog mixing runs.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussmodel::{ScaleBlockTarget, ShellSpec};
use crate::nuts::OrbitParams;
use crate::uturn::{delta_bound, f_unif};

/// Grid points of the phase scan.
const PHASE_GRID: usize = 10_000;
/// `|min g| <= PHASE_TOL` counts as being on the boundary.
pub const PHASE_TOL: f64 = 1e-10;

/// Predicted orbit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TStarPrediction {
    /// Physical length `h (2^k* - 1)` of the predicted orbit.
    pub t_star: f64,
    pub k_star: u32,
    /// No length up to `h (2^k_max - 1)` has negative uniform diagnostic.
    pub capped: bool,
}

impl TStarPrediction {
    pub fn orbit_len(&self) -> usize {
        1 << self.k_star
    }
}

/// One element `h (2^k - 1)` of the set of orbit lengths the doubling loop can
/// test, with the uniform diagnostic there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MenuEntry {
    pub k: u32,
    pub t: f64,
    pub f_unif: f64,
}

/// The lengths `h (2^k - 1)`, `1 <= k <= k_max`, and `f_unif` at each.
pub fn orbit_menu(target: &ScaleBlockTarget, params: &OrbitParams) -> Result<Vec<MenuEntry>> {
    (1..=params.k_max())
        .map(|k| {
            let t = params.h() * ((1u64 << k) - 1) as f64;
            Ok(MenuEntry {
                k,
                t,
                f_unif: f_unif(target, params.hbar(), t)?,
            })
        })
        .collect()
}

/// First menu length with negative uniform diagnostic.
pub fn predict_t_star(target: &ScaleBlockTarget, params: &OrbitParams) -> Result<TStarPrediction> {
    let menu = orbit_menu(target, params)?;
    if let Some(e) = menu.iter().find(|e| e.f_unif < 0.0) {
        return Ok(TStarPrediction {
            t_star: e.t,
            k_star: e.k,
            capped: false,
        });
    }
    let k = params.k_max();
    Ok(TStarPrediction {
        t_star: params.h() * ((1u64 << k) - 1) as f64,
        k_star: k,
        capped: true,
    })
}

/// Half-width of the band around zero that `f_unif` must avoid.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Band {
    /// [`delta_bound`] of the given shells, the same for every length.
    FromShells(ShellSpec),
    Constant(f64),
    /// One half-width per menu length `h (2^k - 1)`, `k = 1..=k_max`, e.g.
    /// a multiple of the measured spread of `f - f_unif` at that length.
    PerLength(Vec<f64>),
}

/// A menu length whose uniform diagnostic lies inside the band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Offender {
    pub k: u32,
    pub t: f64,
    pub f_unif: f64,
    pub delta: f64,
}

/// Result of the selection-condition check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionCheck {
    pub ok: bool,
    pub prediction: TStarPrediction,
    /// Menu lengths up to `t*` with `-delta <= f_unif < delta`.
    pub offenders: Vec<Offender>,
    /// Lengths beyond `t*` inside the band. The doubling loop never tests
    /// them when there are no offenders, so they do not affect `ok`.
    pub beyond_t_star: Vec<Offender>,
}

/// Check that the uniform diagnostic stays out of `[-delta, delta)` on every
/// orbit length the doubling loop tests. When it does, every diagnostic the
/// loop evaluates on points where `|f - f_unif| < delta` has the sign of
/// `f_unif`, and the selected orbit has exactly `2^k*` states.
pub fn check_selection_condition(
    target: &ScaleBlockTarget,
    params: &OrbitParams,
    band: &Band,
) -> Result<SelectionCheck> {
    let menu = orbit_menu(target, params)?;
    let deltas: Vec<f64> = match band {
        Band::FromShells(shell) => vec![delta_bound(target, shell, params.hbar())?; menu.len()],
        Band::Constant(d) => vec![*d; menu.len()],
        Band::PerLength(v) => {
            if v.len() != menu.len() {
                return Err(Error::DimensionMismatch {
                    expected: menu.len(),
                    found: v.len(),
                });
            }
            v.clone()
        }
    };
    if let Some(d) = deltas.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(Error::param(
            "delta",
            format!("must be non-negative and finite, got {d}"),
        ));
    }
    let prediction = predict_t_star(target, params)?;
    let (mut offenders, mut beyond_t_star) = (Vec::new(), Vec::new());
    for (e, &delta) in menu.iter().zip(&deltas) {
        if -delta <= e.f_unif && e.f_unif < delta {
            let o = Offender {
                k: e.k,
                t: e.t,
                f_unif: e.f_unif,
                delta,
            };
            if e.k <= prediction.k_star {
                offenders.push(o);
            } else {
                beyond_t_star.push(o);
            }
        }
    }
    Ok(SelectionCheck {
        ok: offenders.is_empty(),
        prediction,
        offenders,
        beyond_t_star,
    })
}

/// `g(t) = sin(kappa^{-1/2} t) + sin(t) kappa^{-1/2} ratio`: the uniform
/// diagnostic of a two-scale target in units of the fast block.
pub fn phase_function(kappa: f64, ratio: f64, t: f64) -> f64 {
    let s = kappa.sqrt().recip();
    (s * t).sin() + t.sin() * s * ratio
}

/// Minimize a unimodal function on `[a, b]` by golden-section search.
pub fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Phase classification of a two-scale target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseMembership {
    pub accelerated: bool,
    pub on_boundary: bool,
    /// `kappa < 4`: the slow sine reaches its own first zero inside the
    /// window, so any U-turn there happens at the slow scale.
    pub comparable_scales: bool,
    /// Smallest interior local minimum of `g` on `(0, 2 pi)`, or `g(2 pi)`
    /// if that is smaller. Not computed for comparable scales.
    pub min_value: f64,
    pub argmin: f64,
}

/// Whether the two-scale target `(kappa, ratio = d2/d1)` is in the
/// accelerated phase, where NUTS picks orbits at the slow scale.
///
/// For `kappa >= 4` this holds iff `g >= 0` on `(0, 2 pi)`: the fast block
/// never drags the uniform diagnostic below zero before the slow block turns.
/// Below 4 the scales are within a factor 2 of each other and every target is
/// accelerated.
pub fn phase_membership(kappa: f64, ratio: f64) -> Result<PhaseMembership> {
    if !(kappa.is_finite() && kappa >= 1.0) {
        return Err(Error::param("kappa", format!("must be at least 1, got {kappa}")));
    }
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::param("ratio", format!("must be positive, got {ratio}")));
    }
    if kappa < 4.0 {
        return Ok(PhaseMembership {
            accelerated: true,
            on_boundary: false,
            comparable_scales: true,
            min_value: f64::NAN,
            argmin: f64::NAN,
        });
    }
    let g = |t: f64| phase_function(kappa, ratio, t);
    let dt = 2.0 * PI / PHASE_GRID as f64;
    let vals: Vec<f64> = (0..=PHASE_GRID).map(|k| g(k as f64 * dt)).collect();
    let mut best = (2.0 * PI, g(2.0 * PI));
    for k in 1..PHASE_GRID {
        if vals[k] <= vals[k - 1] && vals[k] <= vals[k + 1] {
            let (t, v) = golden_section_min(g, (k - 1) as f64 * dt, (k + 1) as f64 * dt, 1e-13);
            if v < best.1 {
                best = (t, v);
            }
        }
    }
    let on_boundary = best.1.abs() <= PHASE_TOL;
    Ok(PhaseMembership {
        accelerated: best.1 >= 0.0 || on_boundary,
        on_boundary,
        comparable_scales: false,
        min_value: best.1,
        argmin: best.0,
    })
}

/// `a = min_{t in (pi, 2 pi)} -t / sin t` and its minimizer. In the limit of
/// large `kappa` the phase boundary is `ratio = a`.
pub fn phase_boundary_constant() -> (f64, f64) {
    let f = |t: f64| -t / t.sin();
    let n = PHASE_GRID;
    let dt = PI / n as f64;
    let k = (1..n)
        .min_by(|&i, &j| f(PI + i as f64 * dt).total_cmp(&f(PI + j as f64 * dt)))
        .unwrap();
    let (t, a) = golden_section_min(f, PI + (k - 1) as f64 * dt, PI + (k + 1) as f64 * dt, 1e-12);
    (a, t)
}

/// The largest ratio `d2/d1` that is still accelerated at condition number
/// `kappa` (infinite for `kappa < 4`), found by bisection on
/// [`phase_membership`].
pub fn phase_boundary_ratio(kappa: f64) -> Result<f64> {
    if phase_membership(kappa, 1.0)?.comparable_scales {
        return Ok(f64::INFINITY);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while phase_membership(kappa, hi)?.accelerated {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(f64::INFINITY);
        }
    }
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if phase_membership(kappa, mid)?.accelerated {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Step size for leapfrog mixing runs on a multiscale target:
/// `h = 0.5 m_max^{-1/2} d^{-1/4} min(m_min^{1/2} t*, 1)^2`.
pub fn leapfrog_mixing_step(target: &ScaleBlockTarget, t_star: f64) -> f64 {
    let d = target.dim() as f64;
    let s = (target.m_min().sqrt() * t_star).min(1.0);
    0.5 / target.m_max().sqrt() / d.powf(0.25) * s * s
}
