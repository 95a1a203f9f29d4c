//! Monte Carlo experiments and the analytic predictions they are checked
//! against.
//!
//! Every experiment takes a typed configuration, a master seed and an
//! [`Execution`](crate::Execution) mode, and returns a typed outcome that can
//! be rendered into an [`ExperimentReport`].

pub mod concentration;
pub mod contraction;
pub mod mixing;
pub mod orbits;
pub mod predict;

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::flows::FlowVariant;
use crate::gaussmodel::{sample_position, ScaleBlockTarget};
use crate::hmc::{hmc_transition, IntegrationTimeLaw};
use crate::nuts::{nuts_transition, NutsStep, OrbitParams};

pub use predict::{
    check_selection_condition, leapfrog_mixing_step, phase_boundary_constant, phase_boundary_ratio, phase_membership,
    predict_t_star, Band, PhaseMembership, SelectionCheck, TStarPrediction,
};

/// Flow choice in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    #[default]
    Exact,
    Leapfrog,
}

/// A Markov kernel as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Nuts {
        h: f64,
        k_max: u32,
        #[serde(default)]
        flow: FlowKind,
    },
    Hmc {
        law: IntegrationTimeLaw,
        #[serde(default)]
        flow: FlowKind,
        /// Leapfrog step; defaults to the spacing of a triangular law.
        #[serde(default)]
        step: Option<f64>,
    },
}

/// A validated Markov kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Nuts(OrbitParams),
    Hmc { law: IntegrationTimeLaw, flow: FlowVariant },
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel> {
        match *self {
            KernelSpec::Nuts { h, k_max, flow } => Ok(Kernel::Nuts(match flow {
                FlowKind::Exact => OrbitParams::exact(h, k_max)?,
                FlowKind::Leapfrog => OrbitParams::leapfrog(h, k_max)?,
            })),
            KernelSpec::Hmc { law, flow, step } => {
                let flow = match flow {
                    FlowKind::Exact => FlowVariant::Exact,
                    FlowKind::Leapfrog => {
                        let h = match (step, law) {
                            (Some(h), _) => h,
                            (None, IntegrationTimeLaw::Triangular { h, .. }) => h,
                            _ => return Err(Error::param("step", "a leapfrog HMC kernel needs a step size")),
                        };
                        FlowVariant::Leapfrog { h }
                    }
                };
                law.check_flow(flow)?;
                Ok(Kernel::Hmc { law, flow })
            }
        }
    }
}

impl Kernel {
    /// Step size entering the leapfrog corrections.
    pub fn hbar(&self) -> f64 {
        match self {
            Kernel::Nuts(p) => p.hbar(),
            Kernel::Hmc { flow, .. } => flow.hbar(),
        }
    }

    /// One transition. NUTS transitions also return their orbit trace.
    pub fn step<R: Rng + ?Sized>(
        &self,
        target: &ScaleBlockTarget,
        x: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<f64>, Option<NutsStep>)> {
        match self {
            Kernel::Nuts(p) => {
                let s = nuts_transition(target, x, p, rng)?;
                Ok((s.x.clone(), Some(s)))
            }
            Kernel::Hmc { law, flow } => Ok((hmc_transition(target, x, law, *flow, rng)?, None)),
        }
    }
}

/// Where chains start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// A draw from the target.
    #[default]
    Stationary,
    /// The mode `x = 0`.
    Zero,
    /// A draw from the target scaled by 3.
    Overdispersed,
}

impl Start {
    pub fn draw<R: Rng + ?Sized>(&self, target: &ScaleBlockTarget, rng: &mut R) -> Vec<f64> {
        match self {
            Start::Stationary => sample_position(target, rng),
            Start::Zero => vec![0.0; target.dim()],
            Start::Overdispersed => sample_position(target, rng).into_iter().map(|x| 3.0 * x).collect(),
        }
    }
}

/// One value in a result table.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => write!(f, "{v}"),
            Cell::Text(v) => write!(f, "{v}"),
        }
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

/// A rectangular result table, written out as one CSV file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// A pass/fail comparison against a declared tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub comparison: String,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            comparison: "<=".into(),
            threshold,
            passed: value <= threshold,
        }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            comparison: ">=".into(),
            threshold,
            passed: value >= threshold,
        }
    }

    pub fn above(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            comparison: ">".into(),
            threshold,
            passed: value > threshold,
        }
    }

    pub fn below(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            comparison: "<".into(),
            threshold,
            passed: value < threshold,
        }
    }
}

/// Everything an experiment reports. Serializes to `report.json`; tables are
/// written separately.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub rng_scheme: String,
    pub config: Value,
    pub summary: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl ExperimentReport {
    pub fn new(experiment: &str, seed: u64, config: &impl Serialize) -> Self {
        Self {
            experiment: experiment.into(),
            seed,
            rng_scheme: crate::rng::SCHEME.into(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            summary: BTreeMap::new(),
            checks: Vec::new(),
            tables: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        self.summary
            .insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub(crate) fn require_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::param(name, "must be at least 1"))
    } else {
        Ok(())
    }
}
