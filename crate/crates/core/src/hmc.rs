//! Randomized HMC, its couplings, and the contraction and regularization
//! constants of an integration-time law.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{apply_maps_position, beta, steps_for_time, FlowVariant, Propagator};
use crate::gaussmodel::{sample_velocity_into, ScaleBlockTarget};

/// Law of the integration time of a randomized HMC transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntegrationTimeLaw {
    /// Deterministic time `t`.
    Point { t: f64 },
    /// `T = h j` with `P(j) = max(2^k - |j|, 0) / 4^k`: the time NUTS
    /// effectively integrates for when it selects orbits of `2^k` states.
    Triangular { h: f64, k_star: u32 },
    /// Exponential time with rate `lambda`.
    Exponential { lambda: f64 },
}

/// Support and weights of the triangular law as `(j, w_j)`.
pub fn tau_star_weights(k_star: u32) -> Vec<(i64, f64)> {
    let n = 1i64 << k_star;
    let denom = (n as f64) * (n as f64);
    (-(n - 1)..n).map(|j| (j, (n - j.abs()) as f64 / denom)).collect()
}

impl IntegrationTimeLaw {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| Error::param(name, format!("must be positive and finite, got {v}"));
        match *self {
            IntegrationTimeLaw::Point { t } if !t.is_finite() => Err(Error::param("t", "must be finite")),
            IntegrationTimeLaw::Triangular { h, .. } if !(h.is_finite() && h > 0.0) => Err(bad("h", h)),
            IntegrationTimeLaw::Triangular { k_star, .. } if k_star > 30 => {
                Err(Error::param("k_star", "must be at most 30"))
            }
            IntegrationTimeLaw::Exponential { lambda } if !(lambda.is_finite() && lambda > 0.0) => {
                Err(bad("lambda", lambda))
            }
            _ => Ok(()),
        }
    }

    /// Support points and probabilities of a discrete law; `None` for the
    /// exponential law.
    pub fn support(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            IntegrationTimeLaw::Point { t } => Some(vec![(t, 1.0)]),
            IntegrationTimeLaw::Triangular { h, k_star } => Some(
                tau_star_weights(k_star)
                    .into_iter()
                    .map(|(j, w)| (h * j as f64, w))
                    .collect(),
            ),
            IntegrationTimeLaw::Exponential { .. } => None,
        }
    }

    /// Draw an integration time.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            IntegrationTimeLaw::Point { t } => t,
            IntegrationTimeLaw::Triangular { h, k_star } => {
                // The difference of two independent uniforms on {0..2^k - 1}
                // has exactly the triangular law.
                let n = 1i64 << k_star;
                let j = rng.random_range(0..n) - rng.random_range(0..n);
                h * j as f64
            }
            IntegrationTimeLaw::Exponential { lambda } => Exp::new(lambda).expect("validated rate").sample(rng),
        }
    }

    /// Check that every time the law can produce is reachable by `flow`.
    pub fn check_flow(&self, flow: FlowVariant) -> Result<()> {
        self.validate()?;
        let FlowVariant::Leapfrog { h: step } = flow else {
            return Ok(());
        };
        match *self {
            IntegrationTimeLaw::Exponential { .. } => Err(Error::IncompatibleLaw(
                "exponential times are only available with the exact flow".into(),
            )),
            IntegrationTimeLaw::Point { t } => steps_for_time(t, step)
                .map(|_| ())
                .map_err(|_| Error::IncompatibleLaw(format!("time {t} is not a multiple of the leapfrog step {step}"))),
            IntegrationTimeLaw::Triangular { h, .. } => steps_for_time(h, step).map(|_| ()).map_err(|_| {
                Error::IncompatibleLaw(format!("spacing {h} is not a multiple of the leapfrog step {step}"))
            }),
        }
    }
}

/// Move `x` with velocity `v` for time `t` along `flow`, writing into `out`.
fn advance(target: &ScaleBlockTarget, x: &[f64], v: &[f64], flow: FlowVariant, t: f64, out: &mut [f64]) -> Result<()> {
    let (prop, tau) = match flow {
        FlowVariant::Exact => (Propagator::exact_time(target), t),
        FlowVariant::Leapfrog { h } => (Propagator::leapfrog_steps(target, h)?, steps_for_time(t, h)? as f64),
    };
    apply_maps_position(target, x, v, &prop.maps(tau), out);
    Ok(())
}

/// One randomized HMC transition: fresh velocity, random time, flow.
pub fn hmc_transition<R: Rng + ?Sized>(
    target: &ScaleBlockTarget,
    x: &[f64],
    law: &IntegrationTimeLaw,
    flow: FlowVariant,
    rng: &mut R,
) -> Result<Vec<f64>> {
    target.check_len(x.len())?;
    law.check_flow(flow)?;
    let mut v = vec![0.0; x.len()];
    sample_velocity_into(&mut v, rng);
    let t = law.sample(rng);
    let mut out = vec![0.0; x.len()];
    advance(target, x, &v, flow, t, &mut out)?;
    Ok(out)
}

/// Synchronous coupling: both chains share the velocity and the time.
pub fn coupled_hmc_step<R: Rng + ?Sized>(
    target: &ScaleBlockTarget,
    x: &[f64],
    y: &[f64],
    law: &IntegrationTimeLaw,
    flow: FlowVariant,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    target.check_len(x.len())?;
    target.check_len(y.len())?;
    law.check_flow(flow)?;
    let mut v = vec![0.0; x.len()];
    sample_velocity_into(&mut v, rng);
    let t = law.sample(rng);
    let mut xo = vec![0.0; x.len()];
    let mut yo = vec![0.0; y.len()];
    advance(target, x, &v, flow, t, &mut xo)?;
    advance(target, y, &v, flow, t, &mut yo)?;
    Ok((xo, yo))
}

/// `E[sin^2(beta(hbar^2 m) m^{1/2} T)]` under `law`.
fn mean_sin2(law: &IntegrationTimeLaw, hbar: f64, m: f64) -> Result<f64> {
    let w = beta(hbar * hbar * m)? * m.sqrt();
    Ok(match law.support() {
        Some(s) => s.iter().map(|(t, p)| p * (w * t).sin().powi(2)).sum(),
        None => {
            let IntegrationTimeLaw::Exponential { lambda } = *law else {
                unreachable!()
            };
            2.0 * w * w / (lambda * lambda + 4.0 * w * w)
        }
    })
}

/// `rho = 1/2 min_i E[sin^2(beta(hbar^2 m_i) m_i^{1/2} T)]`. The
/// synchronous coupling contracts the target norm by at least `1 - rho` per
/// step in expectation.
pub fn exact_contraction_rate(target: &ScaleBlockTarget, law: &IntegrationTimeLaw, hbar: f64) -> Result<f64> {
    law.validate()?;
    let mut rho = f64::INFINITY;
    for b in target.blocks() {
        rho = rho.min(0.5 * mean_sin2(law, hbar, b.m)?);
    }
    Ok(rho)
}

/// Couple a velocity `v ~ N(0, I)` with `v + s` maximally: returns `v'`
/// distributed as `N(0, I)` and whether `v' = v + s`.
///
/// Only the component along `s` is coupled. It meets with probability
/// `2 Phi(-|s|/2)`; otherwise it is reflected.
pub fn maximal_shift_meet<R: Rng + ?Sized>(v: &[f64], s: &[f64], rng: &mut R) -> Result<(Vec<f64>, bool)> {
    if v.len() != s.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            found: s.len(),
        });
    }
    let a = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    if a == 0.0 {
        return Ok((v.to_vec(), true));
    }
    let z: f64 = v.iter().zip(s).map(|(x, y)| x * y).sum::<f64>() / a;
    // Accept y = z + a with probability min(1, phi(y) / phi(y - a)).
    let y = z + a;
    let log_ratio = -a * y + 0.5 * a * a;
    let met = log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp();
    let shift = if met { a } else { -2.0 * z };
    Ok((v.iter().zip(s).map(|(x, u)| x + shift * u / a).collect(), met))
}

/// Value of the regularization constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularization {
    Finite {
        constant: f64,
        excluded_mass: f64,
    },
    /// A kept support point is a zero of `sin(beta m^{1/2} t)` for some block.
    Infinite {
        pole_time: f64,
        m: f64,
        excluded_mass: f64,
    },
}

/// Is `t` inside one of the half-open intervals `[a, b)`?
fn excluded(t: f64, bands: &[(f64, f64)]) -> bool {
    bands.iter().any(|&(a, b)| a <= t && t < b)
}

/// `sup_i (sum_{t not excluded} w_t cot^2(beta(hbar^2 m_i) m_i^{1/2} t))^{1/2}`
/// for a discrete law, together with the mass of the excluded support.
pub fn exact_regularization_constant(
    target: &ScaleBlockTarget,
    law: &IntegrationTimeLaw,
    hbar: f64,
    bands: &[(f64, f64)],
) -> Result<Regularization> {
    law.validate()?;
    let support = law
        .support()
        .ok_or_else(|| Error::IncompatibleLaw("the regularization constant needs a discrete law".into()))?;
    let excluded_mass: f64 = support
        .iter()
        .filter(|(t, _)| excluded(*t, bands))
        .map(|(_, w)| w)
        .sum();
    let mut sup = 0.0_f64;
    for b in target.blocks() {
        let w = beta(hbar * hbar * b.m)? * b.m.sqrt();
        let mut acc = 0.0;
        for &(t, p) in support.iter().filter(|(t, _)| !excluded(*t, bands)) {
            let (s, c) = (w * t).sin_cos();
            if s.abs() <= 1e-12 {
                return Ok(Regularization::Infinite {
                    pole_time: t,
                    m: b.m,
                    excluded_mass,
                });
            }
            acc += p * (c / s).powi(2);
        }
        sup = sup.max(acc);
    }
    Ok(Regularization::Finite {
        constant: sup.sqrt(),
        excluded_mass,
    })
}

/// The bands `[(pi l - delta) / w_i, (pi l + delta) / w_i)`,
/// `w_i = beta(hbar^2 m_i) m_i^{1/2}`, covering `[-t_abs, t_abs]` for every
/// block: the times near a zero of some `sin(w_i t)`.
pub fn band_set(target: &ScaleBlockTarget, hbar: f64, delta: f64, t_abs: f64) -> Result<Vec<(f64, f64)>> {
    if !(delta > 0.0 && delta < PI / 2.0) {
        return Err(Error::param("delta", "must lie in (0, pi/2)"));
    }
    let mut bands = Vec::new();
    for b in target.blocks() {
        let w = beta(hbar * hbar * b.m)? * b.m.sqrt();
        let lmax = ((w * t_abs + delta) / PI).ceil() as i64;
        for l in -lmax..=lmax {
            let c = PI * l as f64;
            bands.push(((c - delta) / w, (c + delta) / w));
        }
    }
    Ok(bands)
}
