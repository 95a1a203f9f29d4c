//! Gaussian scale-block targets, phase points and concentration shells.
//!
//! A target is a centered Gaussian on R^d with covariance
//! `diag(m_1^{-1} I_{d_1}, ..., m_K^{-1} I_{d_K})`. Coordinates are stored block
//! by block in order of increasing stiffness `m`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One isotropic block: `d` coordinates with precision (stiffness) `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub m: f64,
    pub d: usize,
}

/// A validated block-diagonal Gaussian target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Block>", into = "Vec<Block>")]
pub struct ScaleBlockTarget {
    blocks: Vec<Block>,
    offsets: Vec<usize>,
}

impl ScaleBlockTarget {
    /// Build from arbitrary blocks. Blocks are sorted by stiffness and blocks
    /// with equal stiffness are merged.
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::param("blocks", "at least one block is required"));
        }
        for (i, b) in blocks.iter().enumerate() {
            if !(b.m.is_finite() && b.m > 0.0) {
                return Err(Error::param(
                    format!("blocks[{i}].m"),
                    format!("stiffness must be positive and finite, got {}", b.m),
                ));
            }
            if b.d == 0 {
                return Err(Error::param(
                    format!("blocks[{i}].d"),
                    "multiplicity must be at least 1",
                ));
            }
        }
        let mut sorted = blocks;
        sorted.sort_by(|a, b| a.m.total_cmp(&b.m));
        let mut merged: Vec<Block> = Vec::with_capacity(sorted.len());
        for b in sorted {
            match merged.last_mut() {
                Some(last) if last.m == b.m => last.d += b.d,
                _ => merged.push(b),
            }
        }
        let mut offsets = Vec::with_capacity(merged.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for b in &merged {
            acc += b.d;
            offsets.push(acc);
        }
        Ok(Self {
            blocks: merged,
            offsets,
        })
    }

    pub fn isotropic(m: f64, d: usize) -> Result<Self> {
        Self::new(vec![Block { m, d }])
    }

    pub fn two_scale(m1: f64, m2: f64, d1: usize, d2: usize) -> Result<Self> {
        Self::new(vec![Block { m: m1, d: d1 }, Block { m: m2, d: d2 }])
    }

    /// Normal modes of a harmonic chain: blocks `(i^2, 1)` for `i = 1..=d`.
    pub fn harmonic_chain(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("d", "chain length must be at least 1"));
        }
        Self::new(
            (1..=d)
                .map(|i| Block {
                    m: (i * i) as f64,
                    d: 1,
                })
                .collect(),
        )
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Coordinate range of block `i`.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// `tr(C) = sum d_i / m_i`.
    pub fn trace_cov(&self) -> f64 {
        self.blocks.iter().map(|b| b.d as f64 / b.m).sum()
    }

    /// `tr(C^{1/2}) = sum d_i / sqrt(m_i)`.
    pub fn trace_sqrt_cov(&self) -> f64 {
        self.blocks.iter().map(|b| b.d as f64 / b.m.sqrt()).sum()
    }

    /// Condition number `m_max / m_min`.
    pub fn kappa(&self) -> f64 {
        self.blocks.last().unwrap().m / self.blocks[0].m
    }

    /// Multiplicity of the stiffest block over that of the softest block.
    pub fn dimension_ratio(&self) -> f64 {
        self.blocks.last().unwrap().d as f64 / self.blocks[0].d as f64
    }

    pub fn m_min(&self) -> f64 {
        self.blocks[0].m
    }

    pub fn m_max(&self) -> f64 {
        self.blocks.last().unwrap().m
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }

    /// Whitened squared radius `|m_i^{1/2} x^i|^2` of every block.
    ///
    /// At stationarity block `i` is chi-square with `d_i` degrees of freedom.
    pub fn block_radii(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        Ok(self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| b.m * x[self.range(i)].iter().map(|y| y * y).sum::<f64>())
            .collect())
    }
}

impl TryFrom<Vec<Block>> for ScaleBlockTarget {
    type Error = Error;
    fn try_from(blocks: Vec<Block>) -> Result<Self> {
        Self::new(blocks)
    }
}

impl From<ScaleBlockTarget> for Vec<Block> {
    fn from(t: ScaleBlockTarget) -> Self {
        t.blocks
    }
}

/// Named target presets as they appear in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Isotropic { m: f64, d: usize },
    TwoScale { m1: f64, m2: f64, d1: usize, d2: usize },
    HarmonicChain { d: usize },
    Custom { blocks: Vec<Block> },
}

impl TargetSpec {
    pub fn build(&self) -> Result<ScaleBlockTarget> {
        match self {
            TargetSpec::Isotropic { m, d } => ScaleBlockTarget::isotropic(*m, *d),
            TargetSpec::TwoScale { m1, m2, d1, d2 } => {
                if m1 > m2 {
                    return Err(Error::param("m1", "two-scale targets need m1 <= m2"));
                }
                ScaleBlockTarget::two_scale(*m1, *m2, *d1, *d2)
            }
            TargetSpec::HarmonicChain { d } => ScaleBlockTarget::harmonic_chain(*d),
            TargetSpec::Custom { blocks } => ScaleBlockTarget::new(blocks.clone()),
        }
    }
}

/// Compact command-line form: `isotropic:m,d`, `two_scale:m1,m2,d1,d2`,
/// `harmonic_chain:d` or `custom:m*d,m*d,...`.
impl FromStr for TargetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| Error::param("target", format!("expected `kind:args`, got `{s}`")))?;
        let nums = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = args
                .split(',')
                .map(|a| a.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::param("target", format!("bad number in `{args}`: {e}")))?;
            if v.len() != n {
                return Err(Error::param(
                    "target",
                    format!("`{kind}` takes {n} numbers, got {}", v.len()),
                ));
            }
            Ok(v)
        };
        let count = |x: f64, name: &str| -> Result<usize> {
            if x >= 1.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(Error::param(name, format!("expected a positive integer, got {x}")))
            }
        };
        match kind {
            "isotropic" => {
                let v = nums(2)?;
                Ok(TargetSpec::Isotropic {
                    m: v[0],
                    d: count(v[1], "d")?,
                })
            }
            "two_scale" => {
                let v = nums(4)?;
                Ok(TargetSpec::TwoScale {
                    m1: v[0],
                    m2: v[1],
                    d1: count(v[2], "d1")?,
                    d2: count(v[3], "d2")?,
                })
            }
            "harmonic_chain" => {
                let v = nums(1)?;
                Ok(TargetSpec::HarmonicChain { d: count(v[0], "d")? })
            }
            "custom" => {
                let blocks = args
                    .split(',')
                    .map(|pair| {
                        let (m, d) = pair
                            .split_once('*')
                            .ok_or_else(|| Error::param("target", format!("custom blocks are `m*d`, got `{pair}`")))?;
                        let m: f64 = m
                            .trim()
                            .parse()
                            .map_err(|_| Error::param("target", format!("bad stiffness `{m}`")))?;
                        let d: usize = d
                            .trim()
                            .parse()
                            .map_err(|_| Error::param("target", format!("bad multiplicity `{d}`")))?;
                        Ok(Block { m, d })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(TargetSpec::Custom { blocks })
            }
            other => Err(Error::param("target", format!("unknown target kind `{other}`"))),
        }
    }
}

impl fmt::Display for ScaleBlockTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.blocks.iter().map(|b| format!("{}x{}", b.m, b.d)).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// A position-velocity pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Self {
        Self { x, v }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// The norm `|x| = (sum_i m_i |x^i|^2)^{1/2}` induced by the target precision.
pub fn two_scale_norm(target: &ScaleBlockTarget, x: &[f64]) -> Result<f64> {
    Ok(target.block_radii(x)?.iter().sum::<f64>().sqrt())
}

/// Draw a position from the target.
pub fn sample_position<R: Rng + ?Sized>(target: &ScaleBlockTarget, rng: &mut R) -> Vec<f64> {
    let mut x = vec![0.0; target.dim()];
    for (i, b) in target.blocks().iter().enumerate() {
        let s = b.m.sqrt().recip();
        for xi in &mut x[target.range(i)] {
            let z: f64 = rng.sample(StandardNormal);
            *xi = s * z;
        }
    }
    x
}

/// Fill `v` with standard normal velocities.
pub fn sample_velocity_into<R: Rng + ?Sized>(v: &mut [f64], rng: &mut R) {
    for vi in v {
        *vi = rng.sample(StandardNormal);
    }
}

/// Draw `(x, v)` from the target times the standard normal.
pub fn sample_phase_point<R: Rng + ?Sized>(target: &ScaleBlockTarget, rng: &mut R) -> PhasePoint {
    let x = sample_position(target, rng);
    let mut v = vec![0.0; target.dim()];
    sample_velocity_into(&mut v, rng);
    PhasePoint { x, v }
}

/// Per-block shell radii: `alpha` for the position shell, `r` for the
/// velocity set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellSpec {
    pub alpha: Vec<f64>,
    pub r: Vec<f64>,
}

impl ShellSpec {
    /// `alpha_i = r_i = c sqrt(d_i)`.
    pub fn scaled(target: &ScaleBlockTarget, c: f64) -> Self {
        let v: Vec<f64> = target.blocks().iter().map(|b| c * (b.d as f64).sqrt()).collect();
        Self { alpha: v.clone(), r: v }
    }

    /// The default shells, `alpha_i = r_i = 3 sqrt(d_i)`.
    pub fn standard(target: &ScaleBlockTarget) -> Self {
        Self::scaled(target, 3.0)
    }

    /// `max(alpha_i, r_i)` for every block.
    pub fn max_radius(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.r).map(|(a, r)| a.max(*r)).collect()
    }

    /// Check lengths and `0 <= alpha_i, r_i <= d_i`.
    pub fn validate(&self, target: &ScaleBlockTarget) -> Result<()> {
        let k = target.n_blocks();
        if self.alpha.len() != k || self.r.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: self.alpha.len().min(self.r.len()),
            });
        }
        for (i, b) in target.blocks().iter().enumerate() {
            let d = b.d as f64;
            for (name, val) in [("alpha", self.alpha[i]), ("r", self.r[i])] {
                if !(val >= 0.0 && val <= d) {
                    return Err(Error::param(
                        format!("{name}[{i}]"),
                        format!("shell radius must lie in [0, d_i = {d}], got {val}"),
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_blocks(&self, target: &ScaleBlockTarget) -> Result<()> {
        let k = target.n_blocks();
        if self.alpha.len() != k || self.r.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: self.alpha.len().min(self.r.len()),
            });
        }
        Ok(())
    }
}

/// Membership in the position shell: `| |m_i^{1/2} x^i|^2 - d_i | <= alpha_i`
/// for every block.
pub fn in_position_shell(target: &ScaleBlockTarget, x: &[f64], shell: &ShellSpec) -> Result<bool> {
    shell.check_blocks(target)?;
    let radii = target.block_radii(x)?;
    Ok(target
        .blocks()
        .iter()
        .zip(&radii)
        .zip(&shell.alpha)
        .all(|((b, r2), a)| (r2 - b.d as f64).abs() <= *a))
}

/// Membership in the velocity set attached to `x`:
/// `max(| |v^i|^2 - d_i |, |m_i^{1/2} x^i . v^i|) <= r_i` for every block.
pub fn in_velocity_set(target: &ScaleBlockTarget, x: &[f64], v: &[f64], shell: &ShellSpec) -> Result<bool> {
    shell.check_blocks(target)?;
    target.check_len(x.len())?;
    target.check_len(v.len())?;
    for (i, b) in target.blocks().iter().enumerate() {
        let rg = target.range(i);
        let vv: f64 = v[rg.clone()].iter().map(|y| y * y).sum();
        let xv: f64 = x[rg.clone()].iter().zip(&v[rg]).map(|(a, c)| a * c).sum();
        let dev = (vv - b.d as f64).abs().max((b.m.sqrt() * xv).abs());
        if dev > shell.r[i] {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Lower bound `1 - 2 exp(-alpha^2 / (8 d))` on the stationary probability of
/// one block's position shell. Meaningful for `alpha <= d`.
pub fn position_shell_bound(alpha: f64, d: usize) -> f64 {
    1.0 - 2.0 * (-alpha * alpha / (8.0 * d as f64)).exp()
}

/// Lower bound `1 - 4 exp(-r^2 / (8 d))` on the probability of one block's
/// velocity set.
pub fn velocity_set_bound(r: f64, d: usize) -> f64 {
    1.0 - 4.0 * (-r * r / (8.0 * d as f64)).exp()
}

/// Position shells after `n` transitions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrownShell {
    pub shell: ShellSpec,
    /// Blocks whose grown radius exceeds `d_i`, where the concentration
    /// bounds stop applying.
    pub beyond_dimension: Vec<usize>,
}

/// `alpha_i(n) = max(alpha0_i, r_i) + n (r_i + hbar^2 m_i d_i)`.
pub fn shell_growth(target: &ScaleBlockTarget, shell0: &ShellSpec, hbar: f64, n: u64) -> Result<GrownShell> {
    shell0.check_blocks(target)?;
    if !(hbar >= 0.0 && hbar.is_finite()) {
        return Err(Error::param("hbar", "must be finite and non-negative"));
    }
    let nf = n as f64;
    let mut alpha = Vec::with_capacity(target.n_blocks());
    let mut beyond = Vec::new();
    for (i, b) in target.blocks().iter().enumerate() {
        let r = shell0.r[i];
        let a = shell0.alpha[i].max(r) + nf * (r + hbar * hbar * b.m * b.d as f64);
        if a > b.d as f64 {
            beyond.push(i);
        }
        alpha.push(a);
    }
    Ok(GrownShell {
        shell: ShellSpec {
            alpha,
            r: shell0.r.clone(),
        },
        beyond_dimension: beyond,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn blocks_are_sorted_and_merged() {
        let t = ScaleBlockTarget::new(vec![
            Block { m: 4.0, d: 2 },
            Block { m: 1.0, d: 3 },
            Block { m: 4.0, d: 5 },
        ])
        .unwrap();
        assert_eq!(t.blocks(), &[Block { m: 1.0, d: 3 }, Block { m: 4.0, d: 7 }]);
        assert_eq!(t.dim(), 10);
        assert_eq!(t.range(1), 3..10);
    }

    #[test]
    fn invalid_blocks_are_rejected() {
        assert!(ScaleBlockTarget::isotropic(0.0, 3).is_err());
        assert!(ScaleBlockTarget::isotropic(1.0, 0).is_err());
        assert!(ScaleBlockTarget::isotropic(f64::NAN, 3).is_err());
        assert!(ScaleBlockTarget::new(vec![]).is_err());
    }

    #[test]
    fn traces() {
        let t = ScaleBlockTarget::two_scale(1.0, 100.0, 50, 500).unwrap();
        assert_relative_eq!(t.trace_cov(), 55.0);
        assert_relative_eq!(t.trace_sqrt_cov(), 100.0);
        assert_relative_eq!(t.kappa(), 100.0);
        assert_relative_eq!(t.dimension_ratio(), 10.0);
        let h = ScaleBlockTarget::harmonic_chain(3).unwrap();
        assert_relative_eq!(h.trace_sqrt_cov(), 1.0 + 0.5 + 1.0 / 3.0);
    }

    #[test]
    fn norm_example() {
        let t = ScaleBlockTarget::two_scale(1.0, 100.0, 2, 2).unwrap();
        let n = two_scale_norm(&t, &[3.0, 4.0, 0.1, 0.0]).unwrap();
        assert_relative_eq!(n, 26.0_f64.sqrt(), max_relative = 1e-15);
        assert!(matches!(
            two_scale_norm(&t, &[1.0]),
            Err(Error::DimensionMismatch { expected: 4, found: 1 })
        ));
    }

    #[test]
    fn shell_examples() {
        let t = ScaleBlockTarget::isotropic(1.0, 4).unwrap();
        let sh = ShellSpec {
            alpha: vec![1.0],
            r: vec![4.0],
        };
        assert!(in_position_shell(&t, &[1.0, 1.0, 1.0, 1.0], &sh).unwrap());
        assert!(!in_position_shell(&t, &[2.0, 2.0, 0.0, 0.0], &sh).unwrap());
        let x = [1.0, 1.0, 1.0, 1.0];
        assert!(in_velocity_set(&t, &x, &[0.0; 4], &sh).unwrap());
        let tight = ShellSpec {
            alpha: vec![1.0],
            r: vec![0.5],
        };
        assert!(!in_velocity_set(&t, &x, &[1.0, 1.0, 1.0, 0.0], &tight).unwrap());
    }

    #[test]
    fn growth_examples() {
        let t = ScaleBlockTarget::isotropic(1.0, 400).unwrap();
        let s0 = ShellSpec {
            alpha: vec![20.0],
            r: vec![20.0],
        };
        let g = shell_growth(&t, &s0, 0.0, 3).unwrap();
        assert_relative_eq!(g.shell.alpha[0], 80.0);
        assert!(g.beyond_dimension.is_empty());
        let g = shell_growth(&t, &s0, 0.05, 4).unwrap();
        assert_relative_eq!(g.shell.alpha[0], 20.0 + 4.0 * (20.0 + 0.0025 * 400.0));
        let g = shell_growth(&t, &s0, 0.0, 30).unwrap();
        assert_eq!(g.beyond_dimension, vec![0]);
    }

    #[test]
    fn validate_shells() {
        let t = ScaleBlockTarget::isotropic(1.0, 4).unwrap();
        assert!(ShellSpec::scaled(&t, 2.0).validate(&t).is_ok());
        assert!(ShellSpec::scaled(&t, 3.0).validate(&t).is_err());
    }

    #[test]
    fn target_spec_parsing() {
        let s: TargetSpec = "two_scale:1,2500,200,4000".parse().unwrap();
        assert_eq!(
            s,
            TargetSpec::TwoScale {
                m1: 1.0,
                m2: 2500.0,
                d1: 200,
                d2: 4000
            }
        );
        let c: TargetSpec = "custom:1*3,9*2".parse().unwrap();
        assert_eq!(c.build().unwrap().dim(), 5);
        assert!("two_scale:1,2".parse::<TargetSpec>().is_err());
        assert!("isotropic:1,2.5".parse::<TargetSpec>().is_err());
        assert!("banana:1".parse::<TargetSpec>().is_err());
    }

    #[test]
    fn target_serializes_as_block_list() {
        let t = ScaleBlockTarget::two_scale(1.0, 4.0, 2, 3).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"[{"m":1.0,"d":2},{"m":4.0,"d":3}]"#);
        let back: ScaleBlockTarget = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<ScaleBlockTarget>(r#"[{"m":1.0,"d":2,"q":1}]"#).is_err());
    }
}
