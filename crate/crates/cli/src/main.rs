//! `uturnlab`: run the U-turn lab experiments from JSON configs or flags.
//!
//! Every subcommand reads an optional `--config` file, applies inline flags on
//! top, validates the result against the experiment's schema and writes
//! `report.json`, `config.json` and one CSV per result table to the output
//! directory. Exit status is 0 when every check passes, 1 when a check fails
//! and 2 on configuration errors.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use uturnlab::flows::{leapfrog_stability, Stability};
use uturnlab::lab::concentration::{concentration_experiment, ConcentrationConfig};
use uturnlab::lab::contraction::{contraction_experiment, ContractionConfig};
use uturnlab::lab::mixing::{mixing_experiment, sample_experiment, MixingConfig, SampleConfig};
use uturnlab::lab::orbits::{orbit_statistics_experiment, OrbitStatsConfig};
use uturnlab::lab::predict::orbit_menu;
use uturnlab::lab::{
    phase_boundary_ratio, phase_membership, predict_t_star, Cell, ExperimentReport, FlowKind, KernelSpec, Table,
};
use uturnlab::{Execution, OrbitParams, TargetSpec};

use config::{parse_assignment, set_path, RunConfig, Threads};

#[derive(Parser)]
#[command(
    name = "uturnlab",
    version,
    about = "U-turn orbit selection experiments on Gaussian targets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run chains of a kernel and test the final states against the target.
    Sample(SampleArgs),
    /// Concentration of the U-turn diagnostic around its uniform curve.
    Concentration(ConcentrationArgs),
    /// Orbit lengths, stop reasons and selected indices of NUTS transitions.
    Orbits(OrbitsArgs),
    /// Phase of a two-scale target.
    Phase(PhaseArgs),
    /// Synchronous-coupling contraction of randomized HMC.
    Contraction(ContractionArgs),
    /// Radial KS mixing proxy from a common start.
    Mixing(MixingArgs),
    /// Predicted orbit length.
    Predict(PredictArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sample(_) => "sample",
            Command::Concentration(_) => "concentration",
            Command::Orbits(_) => "orbits",
            Command::Phase(_) => "phase",
            Command::Contraction(_) => "contraction",
            Command::Mixing(_) => "mixing",
            Command::Predict(_) => "predict",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Sample(a) => &a.common,
            Command::Concentration(a) => &a.common,
            Command::Orbits(a) => &a.common,
            Command::Phase(a) => &a.common,
            Command::Contraction(a) => &a.common,
            Command::Mixing(a) => &a.common,
            Command::Predict(a) => &a.common,
        }
    }

    /// Inline flags as `(dotted key, value)` pairs, in override order.
    fn overrides(&self) -> Result<Vec<(String, Value)>> {
        let mut o = Overrides::default();
        match self {
            Command::Sample(a) => {
                o.target(&a.target)?;
                a.kernel.collect(&mut o);
                o.put("n_chains", a.chains);
                o.put("n_transitions", a.transitions);
                o.put("start", a.start.clone());
                o.put("ks_tolerance", a.ks_tolerance);
                if a.trace {
                    o.put("trace", Some(true));
                }
            }
            Command::Concentration(a) => {
                o.target(&a.target)?;
                o.put("flow", a.flow.clone());
                o.put("h", a.h);
                o.put("n_draws", a.draws);
                o.put("grid_points", a.grid_points);
                o.put("t_max", a.t_max);
            }
            Command::Orbits(a) => {
                o.target(&a.target)?;
                o.put("h", a.h);
                o.put("k_max", a.kmax);
                o.put("flow", a.flow.clone());
                o.put("n_transitions", a.transitions);
                o.put("min_modal_fraction", a.min_modal_fraction);
            }
            Command::Phase(a) => {
                o.put("kappa", a.kappa);
                o.put("ratio", a.ratio);
            }
            Command::Contraction(a) => {
                o.target(&a.target)?;
                o.put("law", a.law.clone());
                o.put("flow", a.flow.clone());
                o.put("step", a.step);
                o.put("n_pairs", a.pairs);
                o.put("n_steps", a.steps);
                o.put("start", a.start.clone());
            }
            Command::Mixing(a) => {
                o.target(&a.target)?;
                a.kernel.collect(&mut o);
                o.put("n_replicas", a.replicas);
                o.put("horizon", a.horizon);
                o.put("start", a.start.clone());
                o.put("epsilon", a.epsilon);
                o.put("max_mixing_time", a.max_mixing_time);
            }
            Command::Predict(a) => {
                o.target(&a.target)?;
                o.put("h", a.h);
                o.put("k_max", a.kmax);
                o.put("flow", a.flow.clone());
            }
        }
        o.0.extend(self.common().set.iter().cloned());
        Ok(o.0)
    }
}

#[derive(Default)]
struct Overrides(Vec<(String, Value)>);

impl Overrides {
    fn put<T: Serialize>(&mut self, key: &str, v: Option<T>) {
        if let Some(v) = v {
            self.0
                .push((key.into(), serde_json::to_value(v).expect("flag values serialize")));
        }
    }

    fn target(&mut self, s: &Option<String>) -> Result<()> {
        if let Some(s) = s {
            let t: TargetSpec = s.parse().context("--target")?;
            self.put("target", Some(t));
        }
        Ok(())
    }
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, a positive integer or `auto`.
    #[arg(long, env = "UTURNLAB_THREADS")]
    threads: Option<Threads>,
    /// Output directory.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Override any experiment field, e.g. `--set kernel.h=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment)]
    set: Vec<(String, Value)>,
}

#[derive(Args, Clone)]
struct KernelArgs {
    /// `nuts` or `hmc`.
    #[arg(long)]
    kernel: Option<String>,
    /// NUTS step size.
    #[arg(long)]
    h: Option<f64>,
    /// NUTS maximal doubling depth.
    #[arg(long)]
    kmax: Option<u32>,
    /// `exact` or `leapfrog`.
    #[arg(long)]
    flow: Option<String>,
    /// HMC time law: `point:t`, `triangular:h,k` or `exponential:lambda`.
    #[arg(long, value_parser = parse_law)]
    law: Option<Value>,
    /// HMC leapfrog step.
    #[arg(long)]
    step: Option<f64>,
}

impl KernelArgs {
    fn collect(&self, o: &mut Overrides) {
        o.put("kernel.kind", self.kernel.clone());
        o.put("kernel.h", self.h);
        o.put("kernel.k_max", self.kmax);
        o.put("kernel.flow", self.flow.clone());
        o.put("kernel.law", self.law.clone());
        o.put("kernel.step", self.step);
    }
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    /// Target, e.g. `two_scale:1,2500,2000,2000`.
    #[arg(long)]
    target: Option<String>,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    transitions: Option<u64>,
    /// `stationary`, `zero` or `overdispersed`.
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    ks_tolerance: Option<f64>,
    /// Write one row per NUTS transition.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct ConcentrationArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    flow: Option<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    t_max: Option<f64>,
}

#[derive(Args)]
struct OrbitsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    kmax: Option<u32>,
    #[arg(long)]
    flow: Option<String>,
    #[arg(long)]
    transitions: Option<usize>,
    #[arg(long)]
    min_modal_fraction: Option<f64>,
}

#[derive(Args)]
struct PhaseArgs {
    #[command(flatten)]
    common: Common,
    /// Condition number `m2 / m1`.
    #[arg(long)]
    kappa: Option<f64>,
    /// Dimension ratio `d2 / d1`.
    #[arg(long)]
    ratio: Option<f64>,
}

#[derive(Args)]
struct ContractionArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    target: Option<String>,
    /// `point:t`, `triangular:h,k` or `exponential:lambda`.
    #[arg(long, value_parser = parse_law)]
    law: Option<Value>,
    #[arg(long)]
    flow: Option<String>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    start: Option<String>,
}

#[derive(Args)]
struct MixingArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    target: Option<String>,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_mixing_time: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    kmax: Option<u32>,
    #[arg(long)]
    flow: Option<String>,
}

fn parse_law(s: &str) -> Result<Value, String> {
    let (kind, args) = s
        .split_once(':')
        .ok_or_else(|| format!("expected `variant:args`, got `{s}`"))?;
    let nums: Vec<f64> = args
        .split(',')
        .map(|a| {
            a.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad number in `{args}`: {e}"))
        })
        .collect::<Result<_, _>>()?;
    match (kind, nums.as_slice()) {
        ("point", [t]) => Ok(json!({"variant": "point", "t": t})),
        ("triangular", [h, k]) if k.fract() == 0.0 && *k >= 0.0 => {
            Ok(json!({"variant": "triangular", "h": h, "k_star": *k as u32}))
        }
        ("exponential", [l]) => Ok(json!({"variant": "exponential", "lambda": l})),
        _ => Err(format!("cannot read `{s}` as a time law")),
    }
}

/// Schema of `phase` runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseConfig {
    kappa: f64,
    ratio: f64,
}

/// Schema of `predict` runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictConfig {
    target: TargetSpec,
    h: f64,
    k_max: u32,
    #[serde(default)]
    flow: FlowKind,
}

enum Failure {
    /// Bad configuration or an experiment precondition.
    Config(anyhow::Error),
    /// Anything that went wrong after the run started.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

/// Leapfrog steps with `1 <= h^2 m_max < 4` run, but outside the range the
/// error bounds cover.
fn warn_if_marginal(target: &TargetSpec, flow: FlowKind, h: f64) -> Result<()> {
    if flow == FlowKind::Leapfrog {
        if let Stability::Marginal = leapfrog_stability(&target.build()?, h)? {
            eprintln!("warning: h^2 m_max >= 1 for h = {h}; leapfrog error bounds do not apply");
        }
    }
    Ok(())
}

fn warn_kernel(target: &TargetSpec, kernel: &KernelSpec) -> Result<()> {
    match *kernel {
        KernelSpec::Nuts { h, flow, .. } => warn_if_marginal(target, flow, h),
        KernelSpec::Hmc {
            step: Some(h), flow, ..
        } => warn_if_marginal(target, flow, h),
        KernelSpec::Hmc { .. } => Ok(()),
    }
}

fn params_as<T: DeserializeOwned>(params: &Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(params.clone())).context("params")
}

/// Run the experiment and return its report together with the fully
/// defaulted parameters it ran with.
fn dispatch(
    cmd: &Command,
    params: &Map<String, Value>,
    seed: u64,
    lines: &mut Vec<String>,
) -> Result<(ExperimentReport, Value)> {
    let exec = Execution::Parallel;
    let out = match cmd {
        Command::Sample(_) => {
            let c: SampleConfig = params_as(params)?;
            warn_kernel(&c.target, &c.kernel)?;
            (sample_experiment(&c, seed, exec)?.report(), serde_json::to_value(&c)?)
        }
        Command::Concentration(_) => {
            let c: ConcentrationConfig = params_as(params)?;
            (
                concentration_experiment(&c, seed, exec)?.report(),
                serde_json::to_value(&c)?,
            )
        }
        Command::Orbits(_) => {
            let c: OrbitStatsConfig = params_as(params)?;
            warn_if_marginal(&c.target, c.flow, c.h)?;
            (
                orbit_statistics_experiment(&c, seed, exec)?.report(),
                serde_json::to_value(&c)?,
            )
        }
        Command::Contraction(_) => {
            let c: ContractionConfig = params_as(params)?;
            (
                contraction_experiment(&c, seed, exec)?.report(),
                serde_json::to_value(&c)?,
            )
        }
        Command::Mixing(_) => {
            let c: MixingConfig = params_as(params)?;
            warn_kernel(&c.target, &c.kernel)?;
            (mixing_experiment(&c, seed, exec)?.report(), serde_json::to_value(&c)?)
        }
        Command::Phase(_) => {
            let c: PhaseConfig = params_as(params)?;
            let p = phase_membership(c.kappa, c.ratio)?;
            let boundary = phase_boundary_ratio(c.kappa)?;
            let mut rep = ExperimentReport::new("phase", seed, &c);
            rep.set("accelerated", p.accelerated);
            rep.set("on_boundary", p.on_boundary);
            rep.set("comparable_scales", p.comparable_scales);
            rep.set("min_value", p.min_value);
            rep.set("argmin", p.argmin);
            rep.set("boundary_ratio", boundary);
            lines.push(format!("accelerated: {}", p.accelerated));
            (rep, serde_json::to_value(&c)?)
        }
        Command::Predict(_) => {
            let c: PredictConfig = params_as(params)?;
            warn_if_marginal(&c.target, c.flow, c.h)?;
            let target = c.target.build()?;
            let op = match c.flow {
                FlowKind::Exact => OrbitParams::exact(c.h, c.k_max)?,
                FlowKind::Leapfrog => OrbitParams::leapfrog(c.h, c.k_max)?,
            };
            let p = predict_t_star(&target, &op)?;
            let mut rep = ExperimentReport::new("predict", seed, &c);
            rep.set("t_star", p.t_star);
            rep.set("k_star", p.k_star);
            rep.set("capped", p.capped);
            rep.set("orbit_len", p.orbit_len());
            let mut t = Table::new("menu", &["seed", "k", "t", "f_unif"]);
            for e in orbit_menu(&target, &op)? {
                t.push(vec![
                    Cell::from(seed),
                    Cell::from(e.k as u64),
                    Cell::from(e.t),
                    Cell::from(e.f_unif),
                ]);
            }
            rep.tables.push(t);
            lines.push(format!(
                "t* = {}, k* = {}, capped = {}",
                output::significant(p.t_star, 4),
                p.k_star,
                p.capped
            ));
            (rep, serde_json::to_value(&c)?)
        }
    };
    Ok(out)
}

fn run(cli: Cli) -> std::result::Result<bool, Failure> {
    let cmd = &cli.command;
    let common = cmd.common();
    let mut rc = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(e) = &rc.experiment {
        if e != cmd.name() {
            return Err(Failure::Config(anyhow::anyhow!(
                "field `experiment`: config is for `{e}`, not `{}`",
                cmd.name()
            )));
        }
    }
    for (k, v) in cmd.overrides()? {
        set_path(&mut rc.params, &k, v).with_context(|| format!("override `{k}`"))?;
    }
    if let Some(s) = common.seed {
        rc.seed = s;
    }
    if let Some(t) = common.threads {
        rc.threads = Some(t);
    }
    let out_dir = common
        .output
        .clone()
        .or_else(|| rc.output.clone())
        .unwrap_or_else(|| PathBuf::from(format!("uturnlab-{}", cmd.name())));

    let threads = rc.threads.unwrap_or_default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.pool_size())
        .build()
        .context("building the worker pool")
        .map_err(Failure::Runtime)?;

    let start = Instant::now();
    let mut lines = Vec::new();
    let (report, resolved) = pool.install(|| dispatch(cmd, &rc.params, rc.seed, &mut lines))?;
    let elapsed = start.elapsed().as_secs_f64();

    let echo = RunConfig {
        experiment: Some(cmd.name().into()),
        seed: rc.seed,
        threads: rc.threads,
        output: None,
        params: match resolved {
            Value::Object(m) => m,
            _ => unreachable!("configs serialize to objects"),
        },
    };
    output::write_all(&out_dir, &report, &echo, elapsed).map_err(Failure::Runtime)?;

    for l in &lines {
        println!("{l}");
    }
    for c in &report.checks {
        println!(
            "{} {}: {} {} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.comparison,
            c.threshold
        );
    }
    println!(
        "{}: {} checks, {} failed, {:.2}s, wrote {}",
        cmd.name(),
        report.checks.len(),
        report.checks.iter().filter(|c| !c.passed).count(),
        elapsed,
        out_dir.display()
    );
    Ok(report.all_passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn law_strings() {
        assert_eq!(parse_law("point:0.5").unwrap(), json!({"variant": "point", "t": 0.5}));
        assert_eq!(
            parse_law("triangular:0.026,7").unwrap(),
            json!({"variant": "triangular", "h": 0.026, "k_star": 7})
        );
        assert!(parse_law("triangular:0.1,2.5").is_err());
        assert!(parse_law("gamma:1").is_err());
    }

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn experiment_mismatch_is_rejected() -> Result<()> {
        let dir = std::env::temp_dir().join(format!("uturnlab-mismatch-{}", std::process::id()));
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("c.json");
        std::fs::write(&path, r#"{"experiment": "orbits"}"#)?;
        let cli = Cli::try_parse_from(["uturnlab", "phase", "--config", path.to_str().unwrap()])?;
        match run(cli) {
            Err(Failure::Config(e)) => assert!(e.to_string().contains("experiment")),
            _ => anyhow::bail!("expected a configuration error"),
        }
        Ok(())
    }
}
