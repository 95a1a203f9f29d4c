//! Concentration of the U-turn diagnostic around its uniform part.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_tasks, Execution};
use crate::flows::{BlockMap, Propagator};
use crate::gaussmodel::{sample_phase_point, ScaleBlockTarget, ShellSpec, TargetSpec};
use crate::lab::{require_positive, Check, ExperimentReport, FlowKind, Table};
use crate::nuts::OrbitParams;
use crate::rng::task_rng;
use crate::stats::{mean_se, quantile_sorted};
use crate::uturn::{block_grams, delta_bound, f_unif, BlockGram};

/// Draws handled by one task.
const CHUNK: usize = 256;

/// Below this `tr(C^{1/2}) / tr(C)^{1/2}` the uniform part of the diagnostic
/// does not dominate its fluctuations by an order of magnitude.
pub const WEAK_CONCENTRATION_RATIO: f64 = 10.0;

fn default_grid_points() -> usize {
    20
}
fn default_t_max() -> f64 {
    PI
}
fn default_shell_scale() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationConfig {
    pub target: TargetSpec,
    #[serde(default)]
    pub flow: FlowKind,
    /// Leapfrog step. Grid times are rounded to multiples of it.
    #[serde(default)]
    pub h: Option<f64>,
    /// The grid is `t- in linspace(-t_max, 0, n)` times `t+ in linspace(0, t_max, n)`.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    pub n_draws: usize,
    /// Shells `alpha_i = r_i = c sqrt(d_i)` used for the deterministic bound.
    #[serde(default = "default_shell_scale")]
    pub shell_scale: f64,
}

impl ConcentrationConfig {
    pub fn new(target: TargetSpec, n_draws: usize) -> Self {
        Self {
            target,
            flow: FlowKind::Exact,
            h: None,
            grid_points: default_grid_points(),
            t_max: default_t_max(),
            n_draws,
            shell_scale: default_shell_scale(),
        }
    }
}

/// Statistics of one `(t-, t+)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStats {
    pub t_minus: f64,
    pub t_plus: f64,
    /// Mean and standard error of `v+ . (x+ - x-)`.
    pub mean_vplus: f64,
    pub se_vplus: f64,
    /// Its exact expectation.
    pub expected_vplus: f64,
    pub f_unif: f64,
    /// Moments and quantiles of `f - f_unif`.
    pub mean_dev: f64,
    pub std_dev: f64,
    pub q01: f64,
    pub q50: f64,
    pub q99: f64,
    /// Largest `|f - f_unif|` among draws inside the shells.
    pub max_abs_dev_in_shell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationOutcome {
    pub config: ConcentrationConfig,
    pub seed: u64,
    pub cells: Vec<CellStats>,
    /// Share of cells whose mean `v+ . (x+ - x-)` is within 3 standard errors
    /// of its expectation.
    pub mean_within_3se: f64,
    /// `sqrt(mean variance of f - f_unif)` over cells with `t+ > t-`.
    pub pooled_dev_std: f64,
    pub delta_bound: f64,
    /// Draws in the shells whose deviation exceeded `delta_bound` (any cell).
    pub bound_violations: usize,
    pub draws_in_shell: usize,
    /// `c` in `P(|f - f_unif| >= r) ~ 4 exp(-c min(r^2 / tr C, r / |C^{1/2}|))`,
    /// least-squares fit on the pooled deviations.
    pub fitted_tail_constant: f64,
    pub uniform_to_deviation_ratio: f64,
    pub weak_concentration: bool,
}

struct Layout {
    t_minus: Vec<f64>,
    t_plus: Vec<f64>,
    maps_minus: Vec<Vec<BlockMap>>,
    maps_plus: Vec<Vec<BlockMap>>,
    hbar: f64,
}

fn layout(target: &ScaleBlockTarget, cfg: &ConcentrationConfig) -> Result<Layout> {
    require_positive("grid_points", cfg.grid_points)?;
    require_positive("n_draws", cfg.n_draws)?;
    if !(cfg.t_max.is_finite() && cfg.t_max > 0.0) {
        return Err(Error::param("t_max", "must be positive"));
    }
    let n = cfg.grid_points;
    let lin = |k: usize| {
        if n == 1 {
            0.0
        } else {
            cfg.t_max * k as f64 / (n - 1) as f64
        }
    };
    let (prop, unit, hbar) = match cfg.flow {
        FlowKind::Exact => (Propagator::exact_time(target), None, 0.0),
        FlowKind::Leapfrog => {
            let h = cfg
                .h
                .ok_or_else(|| Error::param("h", "the leapfrog flow needs a step size"))?;
            (Propagator::leapfrog_steps(target, h)?, Some(h), h)
        }
    };
    // For leapfrog, snap to the grid and evaluate by step count.
    let snap = |t: f64| match unit {
        Some(h) => ((t / h).round() * h, (t / h).round()),
        None => (t, t),
    };
    let mut t_minus = Vec::new();
    let mut t_plus = Vec::new();
    let mut maps_minus = Vec::new();
    let mut maps_plus = Vec::new();
    for k in 0..n {
        let (tm, taum) = snap(-lin(n - 1 - k));
        let (tp, taup) = snap(lin(k));
        t_minus.push(tm);
        t_plus.push(tp);
        maps_minus.push(prop.maps(taum));
        maps_plus.push(prop.maps(taup));
    }
    Ok(Layout {
        t_minus,
        t_plus,
        maps_minus,
        maps_plus,
        hbar,
    })
}

/// `(v+ . (x+ - x-), v- . (x+ - x-))` from block second moments.
fn endpoint_products(grams: &[BlockGram], lo: &[BlockMap], hi: &[BlockMap]) -> (f64, f64) {
    let (mut fp, mut fm) = (0.0, 0.0);
    for ((g, l), u) in grams.iter().zip(lo).zip(hi) {
        let (w0, w1) = (u.a - l.a, u.b - l.b);
        fp += u.c * w0 * g.xx + (u.c * w1 + u.e * w0) * g.xv + u.e * w1 * g.vv;
        fm += l.c * w0 * g.xx + (l.c * w1 + l.e * w0) * g.xv + l.e * w1 * g.vv;
    }
    (fp, fm)
}

fn in_shells(target: &ScaleBlockTarget, grams: &[BlockGram], shell: &ShellSpec) -> bool {
    target.blocks().iter().enumerate().all(|(i, b)| {
        let g = &grams[i];
        let d = b.d as f64;
        (b.m * g.xx - d).abs() <= shell.alpha[i]
            && (g.vv - d).abs() <= shell.r[i]
            && (b.m.sqrt() * g.xv).abs() <= shell.r[i]
    })
}

struct ChunkResult {
    vplus: Vec<f64>,
    devs: Vec<f64>,
    shell_max: Vec<f64>,
    in_shell: usize,
    violations: usize,
}

/// Monte Carlo study of `f(t-, t+)` over a grid of orbit endpoints.
pub fn concentration_experiment(cfg: &ConcentrationConfig, seed: u64, exec: Execution) -> Result<ConcentrationOutcome> {
    let target = cfg.target.build()?;
    let lay = layout(&target, cfg)?;
    let n = cfg.grid_points;
    let n_cells = n * n;
    let shell = ShellSpec::scaled(&target, cfg.shell_scale);
    let delta = delta_bound(&target, &shell, lay.hbar)?;
    let unif: Vec<f64> = (0..n_cells)
        .map(|c| f_unif(&target, lay.hbar, lay.t_plus[c % n] - lay.t_minus[c / n]))
        .collect::<Result<_>>()?;

    let n_chunks = cfg.n_draws.div_ceil(CHUNK);
    let chunks = map_tasks(exec, n_chunks, |ci| {
        let mut rng = task_rng(seed, ci as u64);
        let size = CHUNK.min(cfg.n_draws - ci * CHUNK);
        let mut out = ChunkResult {
            vplus: Vec::with_capacity(size * n_cells),
            devs: Vec::with_capacity(size * n_cells),
            shell_max: vec![0.0; n_cells],
            in_shell: 0,
            violations: 0,
        };
        for _ in 0..size {
            let p = sample_phase_point(&target, &mut rng);
            let grams = block_grams(&target, &p);
            let typical = in_shells(&target, &grams, &shell);
            let mut violated = false;
            for c in 0..n_cells {
                let (i, j) = (c / n, c % n);
                let (fp, fm) = endpoint_products(&grams, &lay.maps_minus[i], &lay.maps_plus[j]);
                let dev = fp.min(fm) - unif[c];
                out.vplus.push(fp);
                out.devs.push(dev);
                if typical {
                    out.shell_max[c] = out.shell_max[c].max(dev.abs());
                    violated |= dev.abs() > delta;
                }
            }
            if typical {
                out.in_shell += 1;
                out.violations += usize::from(violated);
            }
        }
        out
    });

    let mut per_vplus: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.n_draws); n_cells];
    let mut per_dev: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.n_draws); n_cells];
    let mut shell_max = vec![0.0_f64; n_cells];
    let (mut in_shell, mut violations) = (0, 0);
    for ch in &chunks {
        let rows = ch.vplus.len() / n_cells;
        for r in 0..rows {
            for c in 0..n_cells {
                per_vplus[c].push(ch.vplus[r * n_cells + c]);
                per_dev[c].push(ch.devs[r * n_cells + c]);
            }
        }
        for c in 0..n_cells {
            shell_max[c] = shell_max[c].max(ch.shell_max[c]);
        }
        in_shell += ch.in_shell;
        violations += ch.violations;
    }
    drop(chunks);

    let mut cells = Vec::with_capacity(n_cells);
    let mut within = 0usize;
    let mut pooled_var = Vec::new();
    let mut pooled_abs = Vec::new();
    for c in 0..n_cells {
        let (i, j) = (c / n, c % n);
        let (mean_vplus, se_vplus) = mean_se(&per_vplus[c]);
        let expected = expected_vplus(&target, &lay.maps_minus[i], &lay.maps_plus[j]);
        if (mean_vplus - expected).abs() <= 3.0 * se_vplus + 1e-9 * expected.abs().max(1.0) {
            within += 1;
        }
        let devs = &mut per_dev[c];
        let (mean_dev, se_dev) = mean_se(devs);
        let std_dev = se_dev * (devs.len() as f64).sqrt();
        if lay.t_plus[j] > lay.t_minus[i] {
            pooled_var.push(std_dev * std_dev);
            pooled_abs.extend(devs.iter().map(|d| d.abs()));
        }
        devs.sort_by(f64::total_cmp);
        cells.push(CellStats {
            t_minus: lay.t_minus[i],
            t_plus: lay.t_plus[j],
            mean_vplus,
            se_vplus,
            expected_vplus: expected,
            f_unif: unif[c],
            mean_dev,
            std_dev,
            q01: quantile_sorted(devs, 0.01),
            q50: quantile_sorted(devs, 0.5),
            q99: quantile_sorted(devs, 0.99),
            max_abs_dev_in_shell: shell_max[c],
        });
    }
    let pooled_dev_std = if pooled_var.is_empty() {
        0.0
    } else {
        (pooled_var.iter().sum::<f64>() / pooled_var.len() as f64).sqrt()
    };
    let ratio = target.trace_sqrt_cov() / target.trace_cov().sqrt();
    Ok(ConcentrationOutcome {
        config: cfg.clone(),
        seed,
        cells,
        mean_within_3se: within as f64 / n_cells as f64,
        pooled_dev_std,
        delta_bound: delta,
        bound_violations: violations,
        draws_in_shell: in_shell,
        fitted_tail_constant: fit_tail_constant(&mut pooled_abs, &target),
        uniform_to_deviation_ratio: ratio,
        weak_concentration: ratio < WEAK_CONCENTRATION_RATIO,
    })
}

/// `E[v+ . (x+ - x-)]` under the target times `N(0, I)`.
fn expected_vplus(target: &ScaleBlockTarget, lo: &[BlockMap], hi: &[BlockMap]) -> f64 {
    target
        .blocks()
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(b, (l, u))| {
            let d = b.d as f64;
            u.c * (u.a - l.a) * d / b.m + u.e * (u.b - l.b) * d
        })
        .sum()
}

fn fit_tail_constant(abs_devs: &mut [f64], target: &ScaleBlockTarget) -> f64 {
    if abs_devs.len() < 100 {
        return f64::NAN;
    }
    abs_devs.sort_by(f64::total_cmp);
    let tr = target.trace_cov();
    let op = target.m_min().sqrt().recip();
    let n = abs_devs.len() as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for q in [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99, 0.995, 0.999] {
        let r = quantile_sorted(abs_devs, q);
        if r <= 0.0 {
            continue;
        }
        let exceed = abs_devs.partition_point(|x| *x < r);
        let p = (abs_devs.len() - exceed) as f64 / n;
        if p <= 0.0 {
            continue;
        }
        let u = (r * r / tr).min(r / op);
        num += -u * (p / 4.0).ln();
        den += u * u;
    }
    if den > 0.0 {
        num / den
    } else {
        f64::NAN
    }
}

impl ConcentrationOutcome {
    pub fn report(&self) -> ExperimentReport {
        let mut rep = ExperimentReport::new("concentration", self.seed, &self.config);
        let mut t = Table::new(
            "cells",
            &[
                "seed",
                "t_minus",
                "t_plus",
                "mean_vplus",
                "se_vplus",
                "expected_vplus",
                "f_unif",
                "mean_dev",
                "std_dev",
                "q01",
                "q50",
                "q99",
                "max_abs_dev_in_shell",
            ],
        );
        for c in &self.cells {
            t.push(vec![
                self.seed.into(),
                c.t_minus.into(),
                c.t_plus.into(),
                c.mean_vplus.into(),
                c.se_vplus.into(),
                c.expected_vplus.into(),
                c.f_unif.into(),
                c.mean_dev.into(),
                c.std_dev.into(),
                c.q01.into(),
                c.q50.into(),
                c.q99.into(),
                c.max_abs_dev_in_shell.into(),
            ]);
        }
        rep.tables.push(t);
        rep.set("mean_within_3se", self.mean_within_3se);
        rep.set("pooled_dev_std", self.pooled_dev_std);
        rep.set("delta_bound", self.delta_bound);
        rep.set("draws_in_shell", self.draws_in_shell);
        rep.set("bound_violations", self.bound_violations);
        rep.set("fitted_tail_constant", self.fitted_tail_constant);
        rep.set("uniform_to_deviation_ratio", self.uniform_to_deviation_ratio);
        rep.set("weak_concentration", self.weak_concentration);
        rep.checks
            .push(Check::at_least("mean_within_3se_fraction", self.mean_within_3se, 0.95));
        rep.checks.push(Check::at_most(
            "deviation_bound_violations",
            self.bound_violations as f64,
            0.0,
        ));
        rep
    }
}

/// Standard deviation of `f(0, t) - f_unif(t)` at every menu length
/// `t = h (2^k - 1)`, `k = 1..=k_max`, from `n_draws` stationary points.
///
/// By stationarity of the flow the law of `f(t-, t+)` depends only on
/// `t+ - t-`, so one endpoint can be fixed at 0.
pub fn deviation_profile(
    target: &ScaleBlockTarget,
    params: &OrbitParams,
    n_draws: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<f64>> {
    require_positive("n_draws", n_draws)?;
    let prop = Propagator::on_grid(target, params.grid())?;
    let ks: Vec<u32> = (1..=params.k_max()).collect();
    let maps: Vec<Vec<BlockMap>> = ks.iter().map(|k| prop.maps(((1u64 << k) - 1) as f64)).collect();
    let zero = prop.maps(0.0);
    let unif: Vec<f64> = ks
        .iter()
        .map(|k| f_unif(target, params.hbar(), params.h() * ((1u64 << k) - 1) as f64))
        .collect::<Result<_>>()?;
    let n_chunks = n_draws.div_ceil(CHUNK);
    let chunks = map_tasks(exec, n_chunks, |ci| {
        let mut rng = task_rng(seed, ci as u64);
        let size = CHUNK.min(n_draws - ci * CHUNK);
        let mut devs = vec![Vec::with_capacity(size); ks.len()];
        for _ in 0..size {
            let p = sample_phase_point(target, &mut rng);
            let grams = block_grams(target, &p);
            for (k, m) in maps.iter().enumerate() {
                let (fp, fm) = endpoint_products(&grams, &zero, m);
                devs[k].push(fp.min(fm) - unif[k]);
            }
        }
        devs
    });
    Ok((0..ks.len())
        .map(|k| {
            let all: Vec<f64> = chunks.iter().flat_map(|c| c[k].iter().copied()).collect();
            crate::stats::std_dev(&all)
        })
        .collect())
}
