//! Orbit lengths, orbit placement and index selection of NUTS transitions
//! started at stationarity.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_tasks, Execution};
use crate::flows::energy_error_bound;
use crate::gaussmodel::{in_position_shell, in_velocity_set, sample_position, ShellSpec, TargetSpec};
use crate::lab::predict::{predict_t_star, TStarPrediction};
use crate::lab::{require_positive, Check, ExperimentReport, FlowKind, Table};
use crate::nuts::{nuts_transition, OrbitParams, StopReason};
use crate::rng::{derive_seed, task_rng};
use crate::stats::{chi_square_uniform, mean_se, ChiSquareTest};

/// p-value below which a uniformity test fails.
pub const UNIFORMITY_LEVEL: f64 = 1e-3;

fn default_modal() -> f64 {
    0.9
}
fn default_shell_scale() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitStatsConfig {
    pub target: TargetSpec,
    pub h: f64,
    pub k_max: u32,
    #[serde(default)]
    pub flow: FlowKind,
    pub n_transitions: usize,
    /// Required share of transitions selecting the predicted orbit length.
    #[serde(default = "default_modal")]
    pub min_modal_fraction: f64,
    /// Shells `alpha_i = r_i = c sqrt(d_i)` for the velocity-set and
    /// uniformization bookkeeping.
    #[serde(default = "default_shell_scale")]
    pub shell_scale: f64,
}

impl OrbitStatsConfig {
    pub fn new(target: TargetSpec, h: f64, k_max: u32, flow: FlowKind, n_transitions: usize) -> Self {
        Self {
            target,
            h,
            k_max,
            flow,
            n_transitions,
            min_modal_fraction: default_modal(),
            shell_scale: default_shell_scale(),
        }
    }

    pub fn params(&self) -> Result<OrbitParams> {
        match self.flow {
            FlowKind::Exact => OrbitParams::exact(self.h, self.k_max),
            FlowKind::Leapfrog => OrbitParams::leapfrog(self.h, self.k_max),
        }
    }
}

/// One NUTS transition from a fresh stationary point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitRecord {
    pub transition: u64,
    pub orbit_len: usize,
    pub min_index: i64,
    pub stop: StopReason,
    pub iota: i64,
    pub delta_h_iota: f64,
    pub max_abs_delta_h: f64,
    /// `|I| min w / sum w`.
    pub uniform_part: f64,
    pub in_position_shell: bool,
    pub in_velocity_set: bool,
    /// Whether this transition fell outside `{v in E} and A_I`, realized
    /// with an auxiliary uniform.
    pub outside_uniform_event: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitStatsOutcome {
    pub config: OrbitStatsConfig,
    pub seed: u64,
    pub prediction: TStarPrediction,
    pub records: Vec<OrbitRecord>,
    pub length_histogram: BTreeMap<usize, usize>,
    pub stop_counts: BTreeMap<String, usize>,
    /// Share of transitions whose orbit has the predicted `2^k*` states.
    pub modal_fraction: f64,
    /// Uniformity of `-min I` over the `2^k*` placements, among orbits of the
    /// predicted length.
    pub placement_test: Option<ChiSquareTest>,
    /// Uniformity of `iota - min I` among the same orbits.
    pub index_test: Option<ChiSquareTest>,
    /// Frequency of the complement of `{v in E} and A_I`.
    pub outside_uniform_frequency: f64,
    /// Its Rao-Blackwellized estimate `mean(1 - 1_E |I| min w / sum w)`.
    pub outside_uniform_mean: f64,
    /// `8 exp(-min_i r_i^2 / d_i / 8) + 2 h^2 max_i(m_i max(alpha_i, r_i) + h^2 m_i^2 d_i)`
    /// (leapfrog only).
    pub outside_uniform_bound: Option<f64>,
    /// Transitions violating `1 - |I| min w / sum w <= 1 - exp(-2 max |Delta H|)`.
    pub uniform_part_violations: usize,
}

/// Run independent NUTS transitions from stationary points.
pub fn orbit_statistics_experiment(cfg: &OrbitStatsConfig, seed: u64, exec: Execution) -> Result<OrbitStatsOutcome> {
    require_positive("n_transitions", cfg.n_transitions)?;
    if !(0.0..=1.0).contains(&cfg.min_modal_fraction) {
        return Err(Error::param("min_modal_fraction", "must lie in [0, 1]"));
    }
    let target = cfg.target.build()?;
    let params = cfg.params()?;
    let prediction = predict_t_star(&target, &params)?;
    let shell = ShellSpec::scaled(&target, cfg.shell_scale);
    let aux_seed = derive_seed(seed, 1);

    let records = map_tasks(exec, cfg.n_transitions, |i| -> Result<OrbitRecord> {
        let mut rng = task_rng(seed, i as u64);
        let x = sample_position(&target, &mut rng);
        let step = nuts_transition(&target, &x, &params, &mut rng)?;
        let tr = &step.trace;
        let in_e = in_velocity_set(&target, &x, &step.v, &shell)?;
        let a = tr.uniform_part_probability();
        let u: f64 = task_rng(aux_seed, i as u64).random();
        Ok(OrbitRecord {
            transition: i as u64,
            orbit_len: tr.len(),
            min_index: tr.orbit.min,
            stop: tr.stop,
            iota: step.iota,
            delta_h_iota: tr.energy_error(step.iota),
            max_abs_delta_h: tr.max_energy_error(),
            uniform_part: a,
            in_position_shell: in_position_shell(&target, &x, &shell)?,
            in_velocity_set: in_e,
            outside_uniform_event: !(in_e && u <= a),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let n = records.len() as f64;
    let mut length_histogram = BTreeMap::new();
    let mut stop_counts = BTreeMap::new();
    for r in &records {
        *length_histogram.entry(r.orbit_len).or_insert(0) += 1;
        *stop_counts.entry(r.stop.as_str().to_string()).or_insert(0) += 1;
    }
    let modal_len = prediction.orbit_len();
    let modal: Vec<&OrbitRecord> = records.iter().filter(|r| r.orbit_len == modal_len).collect();
    let (placement_test, index_test) = if modal.is_empty() || modal_len < 2 {
        (None, None)
    } else {
        let mut place = vec![0u64; modal_len];
        let mut index = vec![0u64; modal_len];
        for r in &modal {
            place[(-r.min_index) as usize] += 1;
            index[(r.iota - r.min_index) as usize] += 1;
        }
        (Some(chi_square_uniform(&place)), Some(chi_square_uniform(&index)))
    };
    let outside_uniform_frequency = records.iter().filter(|r| r.outside_uniform_event).count() as f64 / n;
    let rb: Vec<f64> = records
        .iter()
        .map(|r| 1.0 - if r.in_velocity_set { r.uniform_part } else { 0.0 })
        .collect();
    let outside_uniform_mean = mean_se(&rb).0;
    let outside_uniform_bound = match cfg.flow {
        FlowKind::Exact => None,
        FlowKind::Leapfrog => {
            let min_ratio = target
                .blocks()
                .iter()
                .zip(&shell.r)
                .map(|(b, r)| r * r / b.d as f64)
                .fold(f64::INFINITY, f64::min);
            Some(8.0 * (-min_ratio / 8.0).exp() + 2.0 * energy_error_bound(&target, &shell, cfg.h))
        }
    };
    let uniform_part_violations = records
        .iter()
        .filter(|r| 1.0 - r.uniform_part > 1.0 - (-2.0 * r.max_abs_delta_h).exp() + 1e-12)
        .count();
    Ok(OrbitStatsOutcome {
        config: cfg.clone(),
        seed,
        prediction,
        modal_fraction: modal.len() as f64 / n,
        records,
        length_histogram,
        stop_counts,
        placement_test,
        index_test,
        outside_uniform_frequency,
        outside_uniform_mean,
        outside_uniform_bound,
        uniform_part_violations,
    })
}

impl OrbitStatsOutcome {
    pub fn report(&self) -> ExperimentReport {
        let mut rep = ExperimentReport::new("orbits", self.seed, &self.config);
        let mut t = Table::new(
            "orbits",
            &[
                "seed",
                "transition",
                "orbit_len",
                "min_index",
                "stop_reason",
                "iota",
                "delta_h_iota",
                "uniform_part",
                "in_velocity_set",
            ],
        );
        for r in &self.records {
            t.push(vec![
                self.seed.into(),
                r.transition.into(),
                r.orbit_len.into(),
                r.min_index.into(),
                r.stop.as_str().into(),
                r.iota.into(),
                r.delta_h_iota.into(),
                r.uniform_part.into(),
                r.in_velocity_set.into(),
            ]);
        }
        rep.tables.push(t);
        let mut h = Table::new("length_histogram", &["seed", "orbit_len", "count"]);
        for (len, c) in &self.length_histogram {
            h.push(vec![self.seed.into(), (*len).into(), (*c).into()]);
        }
        rep.tables.push(h);
        rep.set("prediction", self.prediction);
        rep.set("modal_fraction", self.modal_fraction);
        rep.set("stop_counts", &self.stop_counts);
        rep.set("placement_test", self.placement_test);
        rep.set("index_test", self.index_test);
        rep.set("outside_uniform_frequency", self.outside_uniform_frequency);
        rep.set("outside_uniform_mean", self.outside_uniform_mean);
        rep.set("outside_uniform_bound", self.outside_uniform_bound);
        rep.checks.push(Check::at_least(
            "modal_fraction",
            self.modal_fraction,
            self.config.min_modal_fraction,
        ));
        if let Some(t) = self.placement_test {
            rep.checks
                .push(Check::above("placement_uniformity_p", t.p_value, UNIFORMITY_LEVEL));
        }
        if let Some(t) = self.index_test {
            rep.checks
                .push(Check::above("index_uniformity_p", t.p_value, UNIFORMITY_LEVEL));
        }
        if let Some(b) = self.outside_uniform_bound {
            rep.checks.push(Check::at_most(
                "outside_uniform_frequency",
                self.outside_uniform_frequency,
                b,
            ));
        }
        rep.checks.push(Check::at_most(
            "uniform_part_violations",
            self.uniform_part_violations as f64,
            0.0,
        ));
        rep
    }
}
