//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the closed-form machinery of the library.

#![allow(dead_code)]

/// Blocks as plain `(m, d)` pairs.
pub type Blocks = Vec<(f64, usize)>;

pub fn dim(blocks: &Blocks) -> usize {
    blocks.iter().map(|b| b.1).sum()
}

/// Stiffness of every coordinate.
pub fn stiffness(blocks: &Blocks) -> Vec<f64> {
    blocks.iter().flat_map(|&(m, d)| std::iter::repeat(m).take(d)).collect()
}

/// `n` kick-drift-kick velocity-Verlet steps, one at a time.
pub fn verlet(blocks: &Blocks, x: &[f64], v: &[f64], h: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let m = stiffness(blocks);
    let (mut x, mut v) = (x.to_vec(), v.to_vec());
    for _ in 0..n {
        for j in 0..x.len() {
            v[j] -= 0.5 * h * m[j] * x[j];
            x[j] += h * v[j];
            v[j] -= 0.5 * h * m[j] * x[j];
        }
    }
    (x, v)
}

/// `|v|^2 / 2 + sum_j m_j x_j^2 (1 - h^2 m_j / 4) / 2`, conserved exactly by
/// the Verlet map of a harmonic potential.
pub fn shadow_energy(blocks: &Blocks, x: &[f64], v: &[f64], h: f64) -> f64 {
    let m = stiffness(blocks);
    let kin: f64 = v.iter().map(|a| a * a).sum();
    let pot: f64 = x
        .iter()
        .zip(&m)
        .map(|(a, mj)| mj * a * a * (1.0 - h * h * mj / 4.0))
        .sum();
    0.5 * (kin + pot)
}

/// Exact harmonic flow, coordinate by coordinate.
pub fn exact(blocks: &Blocks, x: &[f64], v: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let m = stiffness(blocks);
    let mut xo = vec![0.0; x.len()];
    let mut vo = vec![0.0; x.len()];
    for j in 0..x.len() {
        let w = m[j].sqrt();
        let (s, c) = (w * t).sin_cos();
        xo[j] = c * x[j] + s * v[j] / w;
        vo[j] = -w * s * x[j] + c * v[j];
    }
    (xo, vo)
}

/// Uniform U-turn term `sum_i d_i sin(sqrt(m_i) t) / sqrt(m_i)` of the exact
/// flow.
pub fn f_unif_exact(blocks: &Blocks, t: f64) -> f64 {
    blocks
        .iter()
        .map(|&(m, d)| d as f64 * (m.sqrt() * t).sin() / m.sqrt())
        .sum()
}

/// Leapfrog version: the per-step angle solves `cos(theta) = 1 - h^2 m / 2`.
pub fn f_unif_leapfrog(blocks: &Blocks, h: f64, n: f64) -> f64 {
    blocks
        .iter()
        .map(|&(m, d)| {
            let theta = (1.0 - h * h * m / 2.0).acos();
            d as f64 * (n * theta).sin() / m.sqrt()
        })
        .sum()
}

/// First menu length `h (2^k - 1)`, `1 <= k <= k_max`, where `f` turns
/// negative; `None` if the cap is reached.
pub fn first_negative(h: f64, k_max: u32, f: impl Fn(f64) -> f64) -> Option<(u32, f64)> {
    (1..=k_max)
        .map(|k| (k, ((1u64 << k) - 1) as f64))
        .find(|&(_, n)| f(h * n) < 0.0)
        .map(|(k, n)| (k, h * n))
}

/// `min_i (1/2) E sin^2(sqrt(m_i) tau)` for the triangular law on
/// `h {-(n-1), .., n-1}`, `n = 2^k`, written out from the definition.
pub fn triangular_rho(blocks: &Blocks, h: f64, k: u32) -> f64 {
    let n = 1i64 << k;
    blocks
        .iter()
        .map(|&(m, _)| {
            let mut acc = 0.0;
            for u1 in 0..n {
                for u2 in 0..n {
                    acc += (m.sqrt() * h * (u1 - u2) as f64).sin().powi(2);
                }
            }
            0.5 * acc / (n * n) as f64
        })
        .fold(f64::INFINITY, f64::min)
}

/// Root of `tan t = t` in `(pi, 3 pi / 2)` by Newton iteration, and
/// `a = -t / sin t`.
pub fn boundary_constant() -> (f64, f64) {
    let mut t = 4.49f64;
    for _ in 0..60 {
        let c = t.cos();
        t -= (t.tan() - t) / (1.0 / (c * c) - 1.0);
    }
    (-t / t.sin(), t)
}

/// `2 Phi(-s/2)` for the tested shifts, from an independent high-precision
/// evaluation of `erfc(s / (2 sqrt 2))`.
pub const MEETING: [(f64, f64); 5] = [
    (0.1, 0.960_122_388_323_255),
    (0.5, 0.802_587_348_634_152_6),
    (1.0, 0.617_075_077_451_973_8),
    (2.0, 0.317_310_507_862_914_15),
    (4.0, 0.045_500_263_896_358_44),
];

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
