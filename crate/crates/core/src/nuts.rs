//! The No-U-Turn sampler: orbit construction by doubling, index selection
//! and the full transition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{apply_maps_position, FlowVariant, Grid, Propagator};
use crate::gaussmodel::{sample_velocity_into, PhasePoint, ScaleBlockTarget};
use crate::uturn::{block_grams, sub_uturn, DirectOrbit, GramOrbit, IndexOrbit, OrbitEvaluator};

/// Largest admissible `k_max`; orbits of `2^30` states are far beyond any
/// sensible experiment.
pub const K_MAX_LIMIT: u32 = 30;

/// Step size, doubling cap and flow of the sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitParams {
    grid: Grid,
    k_max: u32,
}

impl OrbitParams {
    pub fn new(h: f64, k_max: u32, flow: FlowVariant) -> Result<Self> {
        if k_max > K_MAX_LIMIT {
            return Err(Error::param("k_max", format!("must be at most {K_MAX_LIMIT}")));
        }
        Ok(Self {
            grid: Grid::new(h, flow)?,
            k_max,
        })
    }

    pub fn exact(h: f64, k_max: u32) -> Result<Self> {
        Self::new(h, k_max, FlowVariant::Exact)
    }

    pub fn leapfrog(h: f64, k_max: u32) -> Result<Self> {
        Self::new(h, k_max, FlowVariant::Leapfrog { h })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    pub fn flow(&self) -> FlowVariant {
        self.grid.flow()
    }

    pub fn hbar(&self) -> f64 {
        self.grid.hbar()
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.grid.flow(), FlowVariant::Exact)
    }
}

/// Why the doubling loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The proposed extension contained a U-turn; the previous orbit is kept.
    ExtensionSubUturn,
    /// The merged orbit made a U-turn.
    ExtendedUturn,
    /// The orbit reached `2^k_max` states.
    KmaxReached,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::ExtensionSubUturn => "extension_sub_uturn",
            StopReason::ExtendedUturn => "extended_uturn",
            StopReason::KmaxReached => "kmax_reached",
        }
    }
}

/// How diagnostics are evaluated while the orbit is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// Per-block second moments; O(#blocks) per diagnostic.
    #[default]
    Gram,
    /// Materialize every visited state; O(d) per diagnostic.
    Direct,
}

/// Outcome of the orbit construction.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitTrace {
    /// The selected orbit.
    pub orbit: IndexOrbit,
    /// Direction bits drawn, `true` meaning forward in time.
    pub directions: Vec<bool>,
    pub stop: StopReason,
    /// Every index whose state was evaluated, including a rejected extension.
    pub visited: IndexOrbit,
    /// `H(state i) - H(p)` for `i` in the orbit, in index order. Zero for
    /// the exact flow.
    pub energy_errors: Vec<f64>,
    exact: bool,
}

impl OrbitTrace {
    pub fn len(&self) -> usize {
        self.orbit.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `H(state i) - H(p)` for an orbit index.
    pub fn energy_error(&self, i: i64) -> f64 {
        self.energy_errors[(i - self.orbit.min) as usize]
    }

    /// `|I| min_i w_i / sum_i w_i` with `w_i = exp(-Delta H_i)`: the
    /// probability of the event on which the selected index is uniform.
    pub fn uniform_part_probability(&self) -> f64 {
        if self.exact {
            return 1.0;
        }
        let lw: Vec<f64> = self.energy_errors.iter().map(|e| -e).collect();
        let mx = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mn = lw.iter().cloned().fold(f64::INFINITY, f64::min);
        let sum: f64 = lw.iter().map(|l| (l - mx).exp()).sum();
        self.len() as f64 * (mn - mx).exp() / sum
    }

    /// Largest `|Delta H|` along the orbit.
    pub fn max_energy_error(&self) -> f64 {
        self.energy_errors.iter().fold(0.0, |a, e| a.max(e.abs()))
    }
}

/// Build the NUTS orbit from `p`.
pub fn build_orbit<R: Rng + ?Sized>(
    target: &ScaleBlockTarget,
    p: &PhasePoint,
    params: &OrbitParams,
    rng: &mut R,
) -> Result<OrbitTrace> {
    build_orbit_with(target, p, params, Backend::Gram, rng)
}

pub fn build_orbit_with<R: Rng + ?Sized>(
    target: &ScaleBlockTarget,
    p: &PhasePoint,
    params: &OrbitParams,
    backend: Backend,
    rng: &mut R,
) -> Result<OrbitTrace> {
    target.check_len(p.x.len())?;
    target.check_len(p.v.len())?;
    match backend {
        Backend::Gram => {
            let mut eval = GramOrbit::new(target, block_grams(target, p), params.grid())?;
            build(&mut eval, params, rng)
        }
        Backend::Direct => {
            let mut eval = DirectOrbit::new(target, p, params.grid())?;
            build(&mut eval, params, rng)
        }
    }
}

fn build<E: OrbitEvaluator, R: Rng + ?Sized>(eval: &mut E, params: &OrbitParams, rng: &mut R) -> Result<OrbitTrace> {
    let cap = 1usize << params.k_max;
    let mut orbit = IndexOrbit::singleton(0);
    let mut visited = orbit;
    let mut directions = Vec::new();
    let stop = loop {
        if orbit.len() == cap {
            break StopReason::KmaxReached;
        }
        let forward = rng.random::<bool>();
        directions.push(forward);
        let ext = orbit.extension(forward);
        visited = visited.union(&ext);
        if sub_uturn(eval, ext)? {
            break StopReason::ExtensionSubUturn;
        }
        orbit = orbit.union(&ext);
        if eval.diagnostic(orbit.min, orbit.max) < 0.0 {
            break StopReason::ExtendedUturn;
        }
    };
    let exact = params.is_exact();
    let energy_errors = if exact {
        vec![0.0; orbit.len()]
    } else {
        orbit.indices().map(|i| eval.energy_error(i)).collect()
    };
    Ok(OrbitTrace {
        orbit,
        directions,
        stop,
        visited,
        energy_errors,
        exact,
    })
}

/// Draw the output index from the orbit with probability proportional to
/// `exp(-Delta H)`, uniformly for the exact flow.
pub fn select_index<R: Rng + ?Sized>(trace: &OrbitTrace, rng: &mut R) -> i64 {
    let o = trace.orbit;
    if trace.exact {
        return rng.random_range(o.min..=o.max);
    }
    let mx = trace.energy_errors.iter().map(|e| -e).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = trace.energy_errors.iter().map(|e| (-e - mx).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, wk) in w.iter().enumerate() {
        if u < *wk {
            return o.min + k as i64;
        }
        u -= wk;
    }
    o.max
}

/// Result of one NUTS transition.
#[derive(Debug, Clone)]
pub struct NutsStep {
    pub x: Vec<f64>,
    pub trace: OrbitTrace,
    pub iota: i64,
    /// The velocity drawn at the start of the transition.
    pub v: Vec<f64>,
}

/// One NUTS transition from `x`: fresh velocity, orbit, index, new position.
pub fn nuts_transition<R: Rng + ?Sized>(
    target: &ScaleBlockTarget,
    x: &[f64],
    params: &OrbitParams,
    rng: &mut R,
) -> Result<NutsStep> {
    nuts_transition_with(target, x, params, Backend::Gram, rng)
}

pub fn nuts_transition_with<R: Rng + ?Sized>(
    target: &ScaleBlockTarget,
    x: &[f64],
    params: &OrbitParams,
    backend: Backend,
    rng: &mut R,
) -> Result<NutsStep> {
    target.check_len(x.len())?;
    let mut v = vec![0.0; x.len()];
    sample_velocity_into(&mut v, rng);
    let p = PhasePoint::new(x.to_vec(), v);
    let trace = build_orbit_with(target, &p, params, backend, rng)?;
    let iota = select_index(&trace, rng);
    let prop = Propagator::on_grid(target, params.grid())?;
    let mut out = vec![0.0; x.len()];
    apply_maps_position(target, &p.x, &p.v, &prop.maps(iota as f64), &mut out);
    Ok(NutsStep {
        x: out,
        trace,
        iota,
        v: p.v,
    })
}
