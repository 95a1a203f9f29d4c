//! Synchronous-coupling contraction and the maximal velocity-shift coupling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_tasks, Execution};
use crate::flows::FlowVariant;
use crate::gaussmodel::{sample_velocity_into, ScaleBlockTarget, TargetSpec};
use crate::hmc::{coupled_hmc_step, exact_contraction_rate, maximal_shift_meet, IntegrationTimeLaw};
use crate::lab::{require_positive, Check, ExperimentReport, FlowKind, Start, Table};
use crate::rng::{derive_seed, task_rng};
use crate::stats::{mean_se, normal_cdf};

fn default_dim() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionConfig {
    pub target: TargetSpec,
    pub law: IntegrationTimeLaw,
    #[serde(default)]
    pub flow: FlowKind,
    /// Leapfrog step; defaults to the spacing of a triangular law.
    #[serde(default)]
    pub step: Option<f64>,
    pub n_pairs: usize,
    pub n_steps: usize,
    #[serde(default)]
    pub start: Start,
    /// Shift lengths `|s|` for the meeting-probability study (optional).
    #[serde(default)]
    pub shifts: Vec<f64>,
    #[serde(default)]
    pub n_meet_trials: usize,
    #[serde(default = "default_dim")]
    pub meet_dim: usize,
}

impl ContractionConfig {
    pub fn new(target: TargetSpec, law: IntegrationTimeLaw, n_pairs: usize, n_steps: usize) -> Self {
        Self {
            target,
            law,
            flow: FlowKind::Exact,
            step: None,
            n_pairs,
            n_steps,
            start: Start::Stationary,
            shifts: Vec::new(),
            n_meet_trials: 0,
            meet_dim: default_dim(),
        }
    }

    fn flow(&self) -> Result<FlowVariant> {
        Ok(match self.flow {
            FlowKind::Exact => FlowVariant::Exact,
            FlowKind::Leapfrog => {
                let h = match (self.step, self.law) {
                    (Some(h), _) => h,
                    (None, IntegrationTimeLaw::Triangular { h, .. }) => h,
                    _ => return Err(Error::param("step", "a leapfrog flow needs a step size")),
                };
                FlowVariant::Leapfrog { h }
            }
        })
    }
}

/// Meeting frequency for one shift length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeetingRow {
    pub shift: f64,
    pub frequency: f64,
    pub se: f64,
    pub predicted: f64,
}

impl MeetingRow {
    pub fn within(&self, n_se: f64) -> bool {
        (self.frequency - self.predicted).abs() <= n_se * self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionOutcome {
    pub config: ContractionConfig,
    pub seed: u64,
    pub rho: f64,
    /// Pooled mean of the one-step ratios `|X' - Y'| / |X - Y|`.
    pub mean_ratio: f64,
    /// Its standard error, clustered by pair.
    pub se_ratio: f64,
    /// Geometric mean of all one-step ratios.
    pub geometric_mean: f64,
    /// Mean ratio and SE at each step, across pairs.
    pub per_step: Vec<(f64, f64)>,
    /// Per block: pooled mean and SE of the block-restricted ratio.
    pub per_block: Vec<(f64, f64)>,
    /// Number of ratios that entered `mean_ratio`.
    pub n_ratios: usize,
    pub meeting: Vec<MeetingRow>,
}

/// Distances below `COALESCED sqrt(dim)` are rounding noise: the pair has met
/// and later ratios are not recorded.
pub const COALESCED: f64 = 1e-10;

/// Ratio estimate `sum S_p / sum N_p` over pairs `p`, with the cluster SE.
fn pooled(sums: &[(f64, usize)]) -> (f64, f64) {
    let total: f64 = sums.iter().map(|s| s.0).sum();
    let n: usize = sums.iter().map(|s| s.1).sum();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = total / n as f64;
    let k = sums.iter().filter(|s| s.1 > 0).count() as f64;
    let var: f64 = sums.iter().map(|(s, c)| (s - mean * *c as f64).powi(2)).sum();
    let se = if k > 1.0 {
        (var * k / (k - 1.0)).sqrt() / n as f64
    } else {
        f64::NAN
    };
    (mean, se)
}

/// Couple pairs of HMC chains synchronously and measure the contraction of
/// their distance in the target norm.
pub fn contraction_experiment(cfg: &ContractionConfig, seed: u64, exec: Execution) -> Result<ContractionOutcome> {
    require_positive("n_pairs", cfg.n_pairs)?;
    require_positive("n_steps", cfg.n_steps)?;
    let target = cfg.target.build()?;
    let flow = cfg.flow()?;
    cfg.law.check_flow(flow)?;
    let rho = exact_contraction_rate(&target, &cfg.law, flow.hbar())?;

    let nb = target.n_blocks();
    let floor2 = |d: usize| COALESCED * COALESCED * d as f64;
    let results = map_tasks(exec, cfg.n_pairs, |i| -> Result<(Vec<f64>, Vec<(f64, usize)>)> {
        let mut rng = task_rng(seed, i as u64);
        let mut x = cfg.start.draw(&target, &mut rng);
        let mut y = cfg.start.draw(&target, &mut rng);
        let mut ratios = Vec::with_capacity(cfg.n_steps);
        let mut block_sums = vec![(0.0, 0usize); nb];
        let mut d = block_dists(&target, &x, &y);
        for _ in 0..cfg.n_steps {
            let (x2, y2) = coupled_hmc_step(&target, &x, &y, &cfg.law, flow, &mut rng)?;
            let d2 = block_dists(&target, &x2, &y2);
            let (tot, tot2) = (d.iter().sum::<f64>(), d2.iter().sum::<f64>());
            ratios.push(if tot > floor2(target.dim()) {
                (tot2 / tot).sqrt()
            } else {
                f64::NAN
            });
            for (b, s) in block_sums.iter_mut().enumerate() {
                if d[b] > floor2(target.blocks()[b].d) {
                    s.0 += (d2[b] / d[b]).sqrt();
                    s.1 += 1;
                }
            }
            x = x2;
            y = y2;
            d = d2;
        }
        Ok((ratios, block_sums))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let per_block = (0..nb)
        .map(|b| pooled(&results.iter().map(|r| r.1[b]).collect::<Vec<_>>()))
        .collect();
    let pair_sums: Vec<(f64, usize)> = results
        .iter()
        .map(|r| {
            r.0.iter()
                .filter(|x| x.is_finite())
                .fold((0.0, 0), |(s, n), x| (s + x, n + 1))
        })
        .collect();
    let (mean_ratio, se_ratio) = pooled(&pair_sums);
    let finite: Vec<f64> = results
        .iter()
        .flat_map(|r| r.0.iter().copied())
        .filter(|x| x.is_finite())
        .collect();
    let geometric_mean = (finite.iter().map(|r| r.max(1e-300).ln()).sum::<f64>() / finite.len() as f64).exp();
    let per_step = (0..cfg.n_steps)
        .map(|s| {
            let v: Vec<f64> = results.iter().map(|r| r.0[s]).filter(|x| x.is_finite()).collect();
            mean_se(&v)
        })
        .collect();
    let meeting = if cfg.shifts.is_empty() {
        Vec::new()
    } else {
        meeting_experiment(&cfg.shifts, cfg.meet_dim, cfg.n_meet_trials, derive_seed(seed, 2), exec)?
    };
    Ok(ContractionOutcome {
        config: cfg.clone(),
        seed,
        rho,
        mean_ratio,
        se_ratio,
        geometric_mean,
        per_step,
        per_block,
        n_ratios: finite.len(),
        meeting,
    })
}

/// Squared block distances `m_i |x^i - y^i|^2`.
fn block_dists(target: &ScaleBlockTarget, x: &[f64], y: &[f64]) -> Vec<f64> {
    target
        .blocks()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let r = target.range(i);
            b.m * x[r.clone()]
                .iter()
                .zip(&y[r])
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
        })
        .collect()
}

/// Frequency with which the maximal shift coupling makes `v' = v + s`,
/// for shifts of each length along the first axis of R^dim.
pub fn meeting_experiment(
    shifts: &[f64],
    dim: usize,
    n_trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<MeetingRow>> {
    require_positive("n_meet_trials", n_trials)?;
    require_positive("meet_dim", dim)?;
    if let Some(s) = shifts.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::param(
            "shifts",
            format!("shift lengths must be non-negative, got {s}"),
        ));
    }
    let rows = map_tasks(exec, shifts.len(), |k| -> Result<MeetingRow> {
        let mut s = vec![0.0; dim];
        s[0] = shifts[k];
        let mut rng = task_rng(seed, k as u64);
        let mut v = vec![0.0; dim];
        let mut met = 0usize;
        for _ in 0..n_trials {
            sample_velocity_into(&mut v, &mut rng);
            if maximal_shift_meet(&v, &s, &mut rng)?.1 {
                met += 1;
            }
        }
        let frequency = met as f64 / n_trials as f64;
        let predicted = 2.0 * normal_cdf(-shifts[k] / 2.0);
        Ok(MeetingRow {
            shift: shifts[k],
            frequency,
            se: (predicted * (1.0 - predicted) / n_trials as f64).sqrt(),
            predicted,
        })
    });
    rows.into_iter().collect()
}

impl ContractionOutcome {
    /// `mean_ratio <= 1 - rho + 3 SE`, for the full distance and for every
    /// block-restricted distance.
    pub fn within_bound(&self) -> bool {
        self.mean_ratio <= 1.0 - self.rho + 3.0 * self.se_ratio
            && self.per_block.iter().all(|(m, se)| *m <= 1.0 - self.rho + 3.0 * se)
    }

    pub fn report(&self) -> ExperimentReport {
        let mut rep = ExperimentReport::new("contraction", self.seed, &self.config);
        let mut t = Table::new("steps", &["seed", "step", "mean_ratio", "se"]);
        for (s, (m, se)) in self.per_step.iter().enumerate() {
            t.push(vec![self.seed.into(), (s + 1).into(), (*m).into(), (*se).into()]);
        }
        rep.tables.push(t);
        rep.set("rho", self.rho);
        rep.set("contraction_bound", 1.0 - self.rho);
        rep.set("mean_ratio", self.mean_ratio);
        rep.set("se_ratio", self.se_ratio);
        rep.set("geometric_mean", self.geometric_mean);
        rep.checks.push(Check::at_most(
            "mean_ratio",
            self.mean_ratio,
            1.0 - self.rho + 3.0 * self.se_ratio,
        ));
        for (i, (m, se)) in self.per_block.iter().enumerate() {
            rep.checks.push(Check::at_most(
                &format!("mean_ratio_block_{i}"),
                *m,
                1.0 - self.rho + 3.0 * se,
            ));
        }
        rep.set("per_block", &self.per_block);
        if !self.meeting.is_empty() {
            let mut m = Table::new("meeting", &["seed", "shift", "frequency", "se", "predicted"]);
            for r in &self.meeting {
                m.push(vec![
                    self.seed.into(),
                    r.shift.into(),
                    r.frequency.into(),
                    r.se.into(),
                    r.predicted.into(),
                ]);
                rep.checks.push(Check::at_most(
                    &format!("meeting_deviation_shift_{}", r.shift),
                    (r.frequency - r.predicted).abs(),
                    3.0 * r.se,
                ));
            }
            rep.tables.push(m);
        }
        rep
    }
}
