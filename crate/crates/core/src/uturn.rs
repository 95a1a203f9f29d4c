//! The U-turn diagnostic, its uniform approximation and deviation bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{beta, evolve, BlockMap, FlowVariant, Grid, Propagator, TimeStamp};
use crate::gaussmodel::{PhasePoint, ScaleBlockTarget, ShellSpec};

/// A contiguous set of grid indices `{min, ..., max}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexOrbit {
    pub min: i64,
    pub max: i64,
}

impl IndexOrbit {
    pub fn new(min: i64, max: i64) -> Result<Self> {
        if min > max {
            return Err(Error::param("orbit", format!("min {min} exceeds max {max}")));
        }
        Ok(Self { min, max })
    }

    pub fn singleton(i: i64) -> Self {
        Self { min: i, max: i }
    }

    pub fn len(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: i64) -> bool {
        self.min <= i && i <= self.max
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<i64> {
        self.min..=self.max
    }

    /// The orbit of the same length adjacent on the right (`forward`) or left.
    pub fn extension(&self, forward: bool) -> Self {
        let n = self.len() as i64;
        if forward {
            Self {
                min: self.max + 1,
                max: self.max + n,
            }
        } else {
            Self {
                min: self.min - n,
                max: self.min - 1,
            }
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }
}

/// `min(v+ . (x+ - x-), v- . (x+ - x-))` for the endpoints of the orbit
/// segment between `t_minus` and `t_plus`.
pub fn uturn_diagnostic(
    target: &ScaleBlockTarget,
    p: &PhasePoint,
    t_minus: TimeStamp,
    t_plus: TimeStamp,
    flow: FlowVariant,
) -> Result<f64> {
    let lo = evolve(target, p, flow, t_minus)?;
    let hi = evolve(target, p, flow, t_plus)?;
    Ok(endpoint_diagnostic(&lo, &hi))
}

fn endpoint_diagnostic(lo: &PhasePoint, hi: &PhasePoint) -> f64 {
    let mut a = 0.0;
    let mut b = 0.0;
    for j in 0..lo.x.len() {
        let dx = hi.x[j] - lo.x[j];
        a += hi.v[j] * dx;
        b += lo.v[j] * dx;
    }
    a.min(b)
}

fn grid_time(grid: &Grid, i: i64) -> TimeStamp {
    match grid.flow() {
        FlowVariant::Exact => TimeStamp::Time(grid.h() * i as f64),
        FlowVariant::Leapfrog { .. } => TimeStamp::Index(i),
    }
}

/// Whether the orbit's endpoints have made a U-turn (strictly negative
/// diagnostic). Singletons never have one.
pub fn has_uturn(target: &ScaleBlockTarget, p: &PhasePoint, orbit: IndexOrbit, grid: &Grid) -> Result<bool> {
    let f = uturn_diagnostic(
        target,
        p,
        grid_time(grid, orbit.min),
        grid_time(grid, orbit.max),
        grid.flow(),
    )?;
    Ok(f < 0.0)
}

/// Whether the orbit or any of its dyadic sub-orbits has a U-turn. The
/// orbit length must be a power of two.
pub fn has_sub_uturn(target: &ScaleBlockTarget, p: &PhasePoint, orbit: IndexOrbit, grid: &Grid) -> Result<bool> {
    let mut eval = DirectOrbit::new(target, p, grid)?;
    sub_uturn(&mut eval, orbit)
}

/// Evaluates diagnostics and energy errors of states on one orbit, caching
/// whatever is reused across checks.
pub(crate) trait OrbitEvaluator {
    /// Diagnostic of the segment between indices `lo <= hi`.
    fn diagnostic(&mut self, lo: i64, hi: i64) -> f64;
    /// `H(state i) - H(state 0)`.
    fn energy_error(&mut self, i: i64) -> f64;
}

pub(crate) fn sub_uturn<E: OrbitEvaluator>(eval: &mut E, orbit: IndexOrbit) -> Result<bool> {
    let n = orbit.len();
    if !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut size = n as i64;
    while size >= 2 {
        let mut start = orbit.min;
        while start <= orbit.max {
            if eval.diagnostic(start, start + size - 1) < 0.0 {
                return Ok(true);
            }
            start += size;
        }
        size /= 2;
    }
    Ok(false)
}

/// Storage for per-index data on a two-sided index range.
struct SidedCache<T> {
    stride: usize,
    pos: Vec<T>,
    neg: Vec<T>,
}

impl<T: Clone> SidedCache<T> {
    fn new(stride: usize) -> Self {
        Self {
            stride,
            pos: Vec::new(),
            neg: Vec::new(),
        }
    }

    fn slot(&self, i: i64) -> (bool, usize) {
        if i >= 0 {
            (true, i as usize)
        } else {
            (false, (-i - 1) as usize)
        }
    }

    fn has(&self, i: i64) -> bool {
        let (p, k) = self.slot(i);
        let len = if p { self.pos.len() } else { self.neg.len() };
        (k + 1) * self.stride <= len
    }

    /// Grow the cache so it covers `i`, filling new slots via `fill(index, out)`.
    fn ensure(&mut self, i: i64, fill: impl Fn(i64, &mut [T]), blank: T) {
        let (p, k) = self.slot(i);
        let stride = self.stride;
        let vec = if p { &mut self.pos } else { &mut self.neg };
        while vec.len() < (k + 1) * stride {
            let idx = vec.len() / stride;
            let index = if p { idx as i64 } else { -(idx as i64) - 1 };
            let start = vec.len();
            vec.resize(start + stride, blank.clone());
            fill(index, &mut vec[start..]);
        }
    }

    fn get(&self, i: i64) -> &[T] {
        let (p, k) = self.slot(i);
        let vec = if p { &self.pos } else { &self.neg };
        &vec[k * self.stride..(k + 1) * self.stride]
    }
}

/// Materializes phase points on the grid and takes dot products of them.
pub(crate) struct DirectOrbit<'a> {
    target: &'a ScaleBlockTarget,
    p: &'a PhasePoint,
    prop: Propagator,
    h0: f64,
    states: SidedCache<f64>,
}

impl<'a> DirectOrbit<'a> {
    pub(crate) fn new(target: &'a ScaleBlockTarget, p: &'a PhasePoint, grid: &Grid) -> Result<Self> {
        target.check_len(p.x.len())?;
        target.check_len(p.v.len())?;
        Ok(Self {
            target,
            p,
            prop: Propagator::on_grid(target, grid)?,
            h0: crate::flows::hamiltonian(target, p)?,
            states: SidedCache::new(2 * target.dim()),
        })
    }

    fn ensure(&mut self, i: i64) {
        if self.states.has(i) {
            return;
        }
        let (target, p, prop) = (self.target, self.p, &self.prop);
        let d = target.dim();
        self.states.ensure(
            i,
            |idx, out| {
                let q = crate::flows::apply_maps(target, p, &prop.maps(idx as f64));
                out[..d].copy_from_slice(&q.x);
                out[d..].copy_from_slice(&q.v);
            },
            0.0,
        );
    }
}

impl OrbitEvaluator for DirectOrbit<'_> {
    fn diagnostic(&mut self, lo: i64, hi: i64) -> f64 {
        self.ensure(lo);
        self.ensure(hi);
        let d = self.target.dim();
        let a = self.states.get(lo);
        let b = self.states.get(hi);
        let (mut fa, mut fb) = (0.0, 0.0);
        for j in 0..d {
            let dx = b[j] - a[j];
            fa += b[d + j] * dx;
            fb += a[d + j] * dx;
        }
        fa.min(fb)
    }

    fn energy_error(&mut self, i: i64) -> f64 {
        self.ensure(i);
        let d = self.target.dim();
        let s = self.states.get(i);
        let mut e = 0.0;
        for (k, b) in self.target.blocks().iter().enumerate() {
            for j in self.target.range(k) {
                e += b.m * s[j] * s[j];
            }
        }
        for j in 0..d {
            e += s[d + j] * s[d + j];
        }
        0.5 * e - self.h0
    }
}

/// Second moments `(|x^i|^2, x^i . v^i, |v^i|^2)` of one block.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BlockGram {
    pub xx: f64,
    pub xv: f64,
    pub vv: f64,
}

impl BlockGram {
    /// `u . w` for `u = u0 x + u1 v` and `w = w0 x + w1 v` within the block.
    #[inline]
    fn dot(&self, u0: f64, u1: f64, w0: f64, w1: f64) -> f64 {
        u0 * w0 * self.xx + (u0 * w1 + u1 * w0) * self.xv + u1 * w1 * self.vv
    }
}

pub fn block_grams(target: &ScaleBlockTarget, p: &PhasePoint) -> Vec<BlockGram> {
    (0..target.n_blocks())
        .map(|i| {
            let mut g = BlockGram::default();
            for j in target.range(i) {
                g.xx += p.x[j] * p.x[j];
                g.xv += p.x[j] * p.v[j];
                g.vv += p.v[j] * p.v[j];
            }
            g
        })
        .collect()
}

/// Evaluates the diagnostic through per-block Gram matrices.
///
/// Both flows act blockwise by 2x2 maps, so every dot product between two
/// states on the orbit is a quadratic form in the three second moments of
/// each block. This costs O(#blocks) per diagnostic instead of O(d) and never
/// materializes a state.
pub(crate) struct GramOrbit {
    prop: Propagator,
    grams: Vec<BlockGram>,
    stiffness: Vec<f64>,
    leapfrog_h: Option<f64>,
    maps: SidedCache<BlockMap>,
}

impl GramOrbit {
    pub(crate) fn new(target: &ScaleBlockTarget, grams: Vec<BlockGram>, grid: &Grid) -> Result<Self> {
        Ok(Self {
            prop: Propagator::on_grid(target, grid)?,
            grams,
            stiffness: target.blocks().iter().map(|b| b.m).collect(),
            leapfrog_h: match grid.flow() {
                FlowVariant::Exact => None,
                FlowVariant::Leapfrog { h } => Some(h),
            },
            maps: SidedCache::new(target.n_blocks()),
        })
    }

    fn ensure(&mut self, i: i64) {
        if !self.maps.has(i) {
            let prop = &self.prop;
            self.maps
                .ensure(i, |idx, out| prop.maps_into(idx as f64, out), BlockMap::IDENTITY);
        }
    }
}

impl OrbitEvaluator for GramOrbit {
    fn diagnostic(&mut self, lo: i64, hi: i64) -> f64 {
        self.ensure(lo);
        self.ensure(hi);
        let ml = self.maps.get(lo);
        let mh = self.maps.get(hi);
        let (mut fa, mut fb) = (0.0, 0.0);
        for ((g, l), u) in self.grams.iter().zip(ml).zip(mh) {
            let (w0, w1) = (u.a - l.a, u.b - l.b);
            fa += g.dot(u.c, u.e, w0, w1);
            fb += g.dot(l.c, l.e, w0, w1);
        }
        fa.min(fb)
    }

    fn energy_error(&mut self, i: i64) -> f64 {
        let Some(h) = self.leapfrog_h else {
            return 0.0;
        };
        self.ensure(i);
        // The leapfrog map conserves H - sum (h^2 m^2 / 8) |x^i|^2, so the
        // energy error only needs the change of |x^i|^2.
        let mut e = 0.0;
        for ((g, m), bm) in self.grams.iter().zip(&self.stiffness).zip(self.maps.get(i)) {
            let s2 = bm.b * bm.b;
            let dxx = -(1.0 - bm.a * bm.a) * g.xx + 2.0 * bm.a * bm.b * g.xv + s2 * g.vv;
            e += h * h * m * m / 8.0 * dxx;
        }
        e
    }
}

/// The uniform part of the diagnostic,
/// `sum_i d_i sin(beta(hbar^2 m_i) m_i^{1/2} dt) / m_i^{1/2}`.
pub fn f_unif(target: &ScaleBlockTarget, hbar: f64, dt: f64) -> Result<f64> {
    let mut f = 0.0;
    for b in target.blocks() {
        let w = b.m.sqrt();
        f += b.d as f64 * (beta(hbar * hbar * b.m)? * w * dt).sin() / w;
    }
    Ok(f)
}

/// Deterministic bound on `|f - f_unif|` for points in the shells:
/// `sum_i (5 max(alpha_i, r_i) d_i^{-1/2} + hbar^2 m_i d_i^{1/2}) m_i^{-1/2} d_i^{1/2}`.
pub fn delta_bound(target: &ScaleBlockTarget, shell: &ShellSpec, hbar: f64) -> Result<f64> {
    if shell.alpha.len() != target.n_blocks() || shell.r.len() != target.n_blocks() {
        return Err(Error::DimensionMismatch {
            expected: target.n_blocks(),
            found: shell.alpha.len().min(shell.r.len()),
        });
    }
    Ok(target
        .blocks()
        .iter()
        .zip(shell.max_radius())
        .map(|(b, mr)| {
            let d = b.d as f64;
            (5.0 * mr / d.sqrt() + hbar * hbar * b.m * d.sqrt()) * d.sqrt() / b.m.sqrt()
        })
        .sum())
}
