//! Replica-based mixing-time estimation with the radial KS proxy, plus plain
//! multi-chain sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_tasks, Execution};
use crate::gaussmodel::{shell_growth, ScaleBlockTarget, ShellSpec, TargetSpec};
use crate::lab::{require_positive, Check, ExperimentReport, KernelSpec, Start, Table};
use crate::rng::task_rng;
use crate::stats::{chi_square_cdf, ks_p_value, ks_statistic, mean_se};

fn default_epsilon() -> f64 {
    0.05
}
fn default_shell_scale() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingConfig {
    pub target: TargetSpec,
    pub kernel: KernelSpec,
    pub n_replicas: usize,
    pub horizon: u64,
    /// Transition counts at which the replicas are compared with the target.
    /// Defaults to every transition `0..=horizon`.
    #[serde(default)]
    pub checkpoints: Option<Vec<u64>>,
    #[serde(default)]
    pub start: Start,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Initial shells `c sqrt(d_i)` of the exit monitor.
    #[serde(default = "default_shell_scale")]
    pub shell_scale: f64,
    /// Optional pass/fail threshold on the estimate.
    #[serde(default)]
    pub max_mixing_time: Option<u64>,
}

impl MixingConfig {
    pub fn new(target: TargetSpec, kernel: KernelSpec, n_replicas: usize, horizon: u64) -> Self {
        Self {
            target,
            kernel,
            n_replicas,
            horizon,
            checkpoints: None,
            start: Start::Stationary,
            epsilon: default_epsilon(),
            shell_scale: default_shell_scale(),
            max_mixing_time: None,
        }
    }

    fn checkpoint_list(&self) -> Result<Vec<u64>> {
        let mut c = match &self.checkpoints {
            Some(c) => c.clone(),
            None => (0..=self.horizon).collect(),
        };
        c.sort_unstable();
        c.dedup();
        match c.last() {
            None => Err(Error::param("checkpoints", "must not be empty")),
            Some(&last) if last > self.horizon => Err(Error::param(
                "checkpoints",
                format!("largest checkpoint {last} exceeds horizon {}", self.horizon),
            )),
            _ => Ok(c),
        }
    }
}

/// Replica law at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointStats {
    pub step: u64,
    /// KS distance of `|m_i^{1/2} x^i|^2` against chi-square(d_i), per block.
    pub ks: Vec<f64>,
    pub max_ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingOutcome {
    pub config: MixingConfig,
    pub seed: u64,
    pub checkpoints: Vec<CheckpointStats>,
    /// First checkpoint with `max_ks < epsilon`; `None` if never reached.
    pub mixing_time: Option<u64>,
    /// Replicas that left the grown shells before the horizon.
    pub shell_exits: usize,
    /// Mean first exit time among those replicas.
    pub mean_exit_time: Option<f64>,
}

impl MixingOutcome {
    /// The estimate, or `horizon + 1` as a lower bound when censored.
    pub fn mixing_time_lower_bound(&self) -> u64 {
        self.mixing_time.unwrap_or(self.config.horizon + 1)
    }
}

fn radial_ks(target: &ScaleBlockTarget, radii: &[&[f64]]) -> Vec<f64> {
    target
        .blocks()
        .iter()
        .enumerate()
        .map(|(b, blk)| {
            let r: Vec<f64> = radii.iter().map(|x| x[b]).collect();
            ks_statistic(&r, |y| chi_square_cdf(blk.d as f64, y))
        })
        .collect()
}

/// Run `n_replicas` independent chains and estimate the mixing time from the
/// per-block radial KS distances at each checkpoint.
pub fn mixing_experiment(cfg: &MixingConfig, seed: u64, exec: Execution) -> Result<MixingOutcome> {
    require_positive("n_replicas", cfg.n_replicas)?;
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
        return Err(Error::param("epsilon", "must lie in (0, 1)"));
    }
    if !(cfg.shell_scale >= 0.0 && cfg.shell_scale.is_finite()) {
        return Err(Error::param("shell_scale", "must be finite and non-negative"));
    }
    let checkpoints = cfg.checkpoint_list()?;
    let target = cfg.target.build()?;
    let kernel = cfg.kernel.build()?;
    let hbar = kernel.hbar();
    let base = ShellSpec::scaled(&target, cfg.shell_scale);
    let growth: Vec<f64> = target
        .blocks()
        .iter()
        .zip(&base.r)
        .map(|(b, r)| r + hbar * hbar * b.m * b.d as f64)
        .collect();

    // Each replica returns its block radii at every checkpoint and its first
    // shell exit.
    let replicas = map_tasks(exec, cfg.n_replicas, |i| -> Result<(Vec<Vec<f64>>, Option<u64>)> {
        let mut rng = task_rng(seed, i as u64);
        let mut x = cfg.start.draw(&target, &mut rng);
        let r0 = target.block_radii(&x)?;
        let shell0 = ShellSpec {
            alpha: target
                .blocks()
                .iter()
                .zip(&r0)
                .zip(&base.alpha)
                .map(|((b, r), a)| a.max((r - b.d as f64).abs()))
                .collect(),
            r: base.r.clone(),
        };
        let start_alpha = shell_growth(&target, &shell0, hbar, 0)?.shell.alpha;
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut next = 0;
        let mut exit = None;
        let mut radii = r0;
        for n in 0..=cfg.horizon {
            if n > 0 {
                x = kernel.step(&target, &x, &mut rng)?.0;
                radii = target.block_radii(&x)?;
                if exit.is_none() {
                    let outside = target
                        .blocks()
                        .iter()
                        .enumerate()
                        .any(|(b, blk)| (radii[b] - blk.d as f64).abs() > start_alpha[b] + n as f64 * growth[b]);
                    if outside {
                        exit = Some(n);
                    }
                }
            }
            while next < checkpoints.len() && checkpoints[next] == n {
                out.push(radii.clone());
                next += 1;
            }
        }
        Ok((out, exit))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let stats: Vec<CheckpointStats> = checkpoints
        .iter()
        .enumerate()
        .map(|(c, &step)| {
            let radii: Vec<&[f64]> = replicas.iter().map(|r| r.0[c].as_slice()).collect();
            let ks = radial_ks(&target, &radii);
            let max_ks = ks.iter().copied().fold(0.0, f64::max);
            CheckpointStats { step, ks, max_ks }
        })
        .collect();
    let mixing_time = stats.iter().find(|s| s.max_ks < cfg.epsilon).map(|s| s.step);
    let exits: Vec<f64> = replicas.iter().filter_map(|r| r.1.map(|n| n as f64)).collect();
    Ok(MixingOutcome {
        config: cfg.clone(),
        seed,
        checkpoints: stats,
        mixing_time,
        shell_exits: exits.len(),
        mean_exit_time: if exits.is_empty() {
            None
        } else {
            Some(mean_se(&exits).0)
        },
    })
}

impl MixingOutcome {
    pub fn report(&self) -> ExperimentReport {
        let mut rep = ExperimentReport::new("mixing", self.seed, &self.config);
        let mut t = Table::new("checkpoints", &["seed", "step", "block", "ks"]);
        for c in &self.checkpoints {
            for (b, ks) in c.ks.iter().enumerate() {
                t.push(vec![self.seed.into(), c.step.into(), b.into(), (*ks).into()]);
            }
        }
        rep.tables.push(t);
        rep.set("mixing_time", self.mixing_time);
        rep.set("mixing_time_lower_bound", self.mixing_time_lower_bound());
        rep.set("censored", self.mixing_time.is_none());
        rep.set("shell_exits", self.shell_exits);
        rep.set("mean_exit_time", self.mean_exit_time);
        if let Some(m) = self.config.max_mixing_time {
            rep.checks.push(Check::at_most(
                "mixing_time",
                self.mixing_time_lower_bound() as f64,
                m as f64,
            ));
        }
        rep
    }
}

fn default_level() -> f64 {
    1e-3
}

/// Plain multi-chain sampling with a stationarity check on the final states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub target: TargetSpec,
    pub kernel: KernelSpec,
    pub n_chains: usize,
    pub n_transitions: u64,
    #[serde(default)]
    pub start: Start,
    /// Optional bound on the per-block radial KS distance of the final states.
    #[serde(default)]
    pub ks_tolerance: Option<f64>,
    /// Significance level of the moment and KS tests.
    #[serde(default = "default_level")]
    pub level: f64,
    /// Emit one trace row per NUTS transition.
    #[serde(default)]
    pub trace: bool,
}

impl SampleConfig {
    pub fn new(target: TargetSpec, kernel: KernelSpec, n_chains: usize, n_transitions: u64) -> Self {
        Self {
            target,
            kernel,
            n_chains,
            n_transitions,
            start: Start::Stationary,
            ks_tolerance: None,
            level: default_level(),
            trace: false,
        }
    }
}

/// One NUTS transition of one chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub chain: u64,
    pub step: u64,
    pub orbit_len: usize,
    pub min_index: i64,
    pub stop_reason: &'static str,
    pub iota: i64,
    pub delta_h: f64,
}

/// Final-state statistics of one block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSummary {
    pub m: f64,
    pub d: usize,
    /// Mean of the whitened coordinates `m^{1/2} x_j`, and its SE.
    pub mean: (f64, f64),
    /// Mean of `|m^{1/2} x^i|^2 / d_i`, and its SE under the target.
    pub variance: (f64, f64),
    pub ks: f64,
    pub ks_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleOutcome {
    pub config: SampleConfig,
    pub seed: u64,
    pub blocks: Vec<BlockSummary>,
    pub trace: Vec<TraceRow>,
    pub final_states: Vec<Vec<f64>>,
}

pub fn sample_experiment(cfg: &SampleConfig, seed: u64, exec: Execution) -> Result<SampleOutcome> {
    require_positive("n_chains", cfg.n_chains)?;
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::param("level", "must lie in (0, 1)"));
    }
    let target = cfg.target.build()?;
    let kernel = cfg.kernel.build()?;
    let chains = map_tasks(exec, cfg.n_chains, |i| -> Result<(Vec<f64>, Vec<TraceRow>)> {
        let mut rng = task_rng(seed, i as u64);
        let mut x = cfg.start.draw(&target, &mut rng);
        let mut rows = Vec::new();
        for n in 1..=cfg.n_transitions {
            let (x2, step) = kernel.step(&target, &x, &mut rng)?;
            if let (true, Some(s)) = (cfg.trace, step) {
                rows.push(TraceRow {
                    chain: i as u64,
                    step: n,
                    orbit_len: s.trace.len(),
                    min_index: s.trace.orbit.min,
                    stop_reason: s.trace.stop.as_str(),
                    iota: s.iota,
                    delta_h: s.trace.energy_error(s.iota),
                });
            }
            x = x2;
        }
        Ok((x, rows))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let n = cfg.n_chains as f64;
    let blocks = target
        .blocks()
        .iter()
        .enumerate()
        .map(|(b, blk)| {
            let rg = target.range(b);
            let sm = blk.m.sqrt();
            let d = blk.d as f64;
            let means: Vec<f64> = chains
                .iter()
                .map(|(x, _)| x[rg.clone()].iter().map(|y| sm * y).sum::<f64>() / d)
                .collect();
            let radii: Vec<f64> = chains
                .iter()
                .map(|(x, _)| x[rg.clone()].iter().map(|y| blk.m * y * y).sum::<f64>())
                .collect();
            let ks = ks_statistic(&radii, |y| chi_square_cdf(d, y));
            BlockSummary {
                m: blk.m,
                d: blk.d,
                mean: (mean_se(&means).0, 1.0 / (n * d).sqrt()),
                variance: (radii.iter().sum::<f64>() / (n * d), (2.0 / (n * d)).sqrt()),
                ks,
                ks_p_value: ks_p_value(ks, n),
            }
        })
        .collect();
    let (final_states, traces): (Vec<_>, Vec<_>) = chains.into_iter().unzip();
    Ok(SampleOutcome {
        config: cfg.clone(),
        seed,
        blocks,
        trace: traces.into_iter().flatten().collect(),
        final_states,
    })
}

impl SampleOutcome {
    pub fn report(&self) -> ExperimentReport {
        let mut rep = ExperimentReport::new("sample", self.seed, &self.config);
        let mut t = Table::new(
            "blocks",
            &[
                "seed",
                "block",
                "m",
                "d",
                "mean",
                "mean_se",
                "variance",
                "variance_se",
                "ks",
                "ks_p_value",
            ],
        );
        for (b, s) in self.blocks.iter().enumerate() {
            t.push(vec![
                self.seed.into(),
                b.into(),
                s.m.into(),
                s.d.into(),
                s.mean.0.into(),
                s.mean.1.into(),
                s.variance.0.into(),
                s.variance.1.into(),
                s.ks.into(),
                s.ks_p_value.into(),
            ]);
            rep.checks.push(Check::at_most(
                &format!("mean_block_{b}"),
                s.mean.0.abs(),
                3.0 * s.mean.1,
            ));
            rep.checks.push(Check::at_most(
                &format!("variance_block_{b}"),
                (s.variance.0 - 1.0).abs(),
                3.0 * s.variance.1,
            ));
            rep.checks.push(Check::above(
                &format!("ks_p_value_block_{b}"),
                s.ks_p_value,
                self.config.level,
            ));
            if let Some(tol) = self.config.ks_tolerance {
                rep.checks.push(Check::below(&format!("ks_block_{b}"), s.ks, tol));
            }
        }
        rep.tables.push(t);
        if self.config.trace {
            let mut tr = Table::new(
                "transitions",
                &[
                    "seed",
                    "chain",
                    "step",
                    "orbit_len",
                    "min_index",
                    "stop_reason",
                    "iota",
                    "delta_h",
                ],
            );
            for r in &self.trace {
                tr.push(vec![
                    self.seed.into(),
                    r.chain.into(),
                    r.step.into(),
                    r.orbit_len.into(),
                    r.min_index.into(),
                    r.stop_reason.into(),
                    r.iota.into(),
                    r.delta_h.into(),
                ]);
            }
            rep.tables.push(tr);
        }
        rep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::FlowKind;

    fn nuts() -> KernelSpec {
        KernelSpec::Nuts {
            h: 0.3,
            k_max: 6,
            flow: FlowKind::Exact,
        }
    }

    #[test]
    fn zero_start_mixes_quickly_on_isotropic() {
        let mut cfg = MixingConfig::new(TargetSpec::Isotropic { m: 1.0, d: 50 }, nuts(), 1000, 20);
        cfg.start = Start::Zero;
        let out = mixing_experiment(&cfg, 3, Execution::Parallel).unwrap();
        assert_eq!(out.checkpoints[0].max_ks, 1.0);
        let t = out.mixing_time.expect("mixed");
        // the variance deficit roughly halves per transition
        assert!((4..=15).contains(&t), "{t}");
        let seq = mixing_experiment(&cfg, 3, Execution::Sequential).unwrap();
        assert_eq!(out, seq);
    }

    #[test]
    fn checkpoints_past_horizon_rejected() {
        let mut cfg = MixingConfig::new(TargetSpec::Isotropic { m: 1.0, d: 5 }, nuts(), 10, 5);
        cfg.checkpoints = Some(vec![1, 6]);
        assert!(mixing_experiment(&cfg, 0, Execution::Sequential).is_err());
    }

    #[test]
    fn sample_trace_rows() {
        let mut cfg = SampleConfig::new(TargetSpec::Isotropic { m: 1.0, d: 20 }, nuts(), 50, 4);
        cfg.trace = true;
        let out = sample_experiment(&cfg, 1, Execution::Parallel).unwrap();
        assert_eq!(out.trace.len(), 200);
        assert!(out
            .trace
            .iter()
            .all(|r| r.min_index <= 0 && r.orbit_len.is_power_of_two()));
        let rep = out.report();
        assert_eq!(rep.tables.len(), 2);
    }
}
