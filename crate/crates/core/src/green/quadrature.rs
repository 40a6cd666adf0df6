//! Fourier quadrature for the lattice Green function.
//!
//! With `m = d - 1` and `a = 1 + Σ_{j<d} (1 - cos θ_j)` the last Fourier
//! variable integrates in closed form,
//!
//! ```text
//! (1/2π) ∫ cos(n θ) / (a - cos θ) dθ = ρ^n / sqrt(a² - 1),   ρ = 1 / (a + sqrt(a² - 1)),
//! ```
//!
//! leaving `g(x) = π^{-m} ∫_{[0,π]^m} d ρ^{x_d} / sqrt(a² - 1) Π cos(x_j θ_j)`,
//! where coordinates are sorted so that `x_d` is the largest. The remaining
//! `1/|θ|` singularity at the origin is removed by splitting the cube into the
//! `m` pyramids `θ_k = max_j θ_j` and substituting `θ_k = s`, `θ_j = s t_j`;
//! the Jacobian `s^{m-1}` cancels the pole and the integrand becomes analytic
//! in `(s, t)`, so tensor Gauss–Legendre converges geometrically.
//!
//! Each entry is accepted at the first order `n` where it differs from the
//! order `n/2` estimate by less than the tolerance. Partial sums are reduced in
//! a fixed block order, so a value depends only on `(d, x, tol)` and never on
//! which other entries were requested or on the thread count.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use rayon::prelude::*;

use crate::error::{Error, Result};

const FIRST_ORDER: usize = 16;
const MIN_ACCEPT_ORDER: usize = 64;
pub(crate) const MAX_ORDER: usize = 1024;
/// Node groups (one per pyramid and radial node) summed sequentially per block.
const GROUPS_PER_BLOCK: usize = 8;

/// Canonical key of an offset: absolute values sorted ascending.
pub(crate) fn canonical(x: &[i64]) -> Vec<u32> {
    let mut k: Vec<u32> = x.iter().map(|v| v.unsigned_abs() as u32).collect();
    k.sort_unstable();
    k
}

fn gl_on(n: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n).expect("order is positive"));
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    rule.as_node_weight_pairs().iter().map(|&(x, w)| (mid + half * x, half * w)).collect()
}

/// Order-`n` estimates for every canonical entry.
fn estimate(dim: usize, entries: &[Vec<u32>], n: usize) -> Vec<f64> {
    let m = dim - 1;
    let extent = entries.iter().flat_map(|e| e.iter().copied()).max().unwrap_or(0) as usize;
    let radial = gl_on(n, 0.0, std::f64::consts::PI);
    let angular = gl_on(n, 0.0, 1.0);
    let inner_count = n.pow((m - 1) as u32);
    let groups = m * n;
    let prefactor = dim as f64 / std::f64::consts::PI.powi(m as i32);

    let blocks: Vec<Vec<f64>> = (0..groups.div_ceil(GROUPS_PER_BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; entries.len()];
            let mut theta = vec![0.0; m];
            let mut cosines = vec![0.0; m * (extent + 1)];
            let mut powers = vec![0.0; extent + 1];
            for g in b * GROUPS_PER_BLOCK..((b + 1) * GROUPS_PER_BLOCK).min(groups) {
                let pyramid = g / n;
                let (s, ws) = radial[g % n];
                for inner in 0..inner_count {
                    let mut w = ws * s.powi(m as i32 - 1) * prefactor;
                    let mut rest = inner;
                    for (j, th) in theta.iter_mut().enumerate() {
                        if j == pyramid {
                            *th = s;
                        } else {
                            let (t, wt) = angular[rest % n];
                            rest /= n;
                            *th = s * t;
                            w *= wt;
                        }
                    }
                    let am1: f64 = theta.iter().map(|t| 2.0 * (0.5 * t).sin().powi(2)).sum();
                    let root = (am1 * (am1 + 2.0)).sqrt();
                    let rho = 1.0 / (1.0 + am1 + root);
                    w /= root;
                    for (j, th) in theta.iter().enumerate() {
                        let c = &mut cosines[j * (extent + 1)..(j + 1) * (extent + 1)];
                        let c1 = th.cos();
                        c[0] = 1.0;
                        if extent >= 1 {
                            c[1] = c1;
                        }
                        for k in 2..=extent {
                            c[k] = 2.0 * c1 * c[k - 1] - c[k - 2];
                        }
                    }
                    powers[0] = 1.0;
                    for k in 1..=extent {
                        powers[k] = powers[k - 1] * rho;
                    }
                    for (slot, e) in acc.iter_mut().zip(entries) {
                        let mut v = w * powers[e[m] as usize];
                        for j in 0..m {
                            v *= cosines[j * (extent + 1) + e[j] as usize];
                        }
                        *slot += v;
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = vec![0.0; entries.len()];
    for block in &blocks {
        for (t, v) in total.iter_mut().zip(block) {
            *t += v;
        }
    }
    total
}

/// Green values for canonical entries, each converged to `tol`.
pub(crate) fn green_values(dim: usize, entries: &[Vec<u32>], tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("quadrature tolerance must be positive, got {tol}")));
    }
    let mut result = vec![f64::NAN; entries.len()];
    let mut active: Vec<usize> = (0..entries.len()).collect();
    let mut previous: Vec<f64> = Vec::new();
    let mut n = FIRST_ORDER;
    loop {
        let subset: Vec<Vec<u32>> = active.iter().map(|&i| entries[i].clone()).collect();
        let current = estimate(dim, &subset, n);
        if previous.len() == current.len() && n >= MIN_ACCEPT_ORDER {
            let mut still = Vec::new();
            let mut still_prev = Vec::new();
            for (k, &i) in active.iter().enumerate() {
                if (current[k] - previous[k]).abs() < tol {
                    result[i] = current[k];
                } else {
                    still.push(i);
                    still_prev.push(current[k]);
                }
            }
            if still.is_empty() {
                return Ok(result);
            }
            if n >= MAX_ORDER {
                let worst =
                    active.iter().enumerate().map(|(k, _)| (current[k] - previous[k]).abs()).fold(0.0, f64::max);
                return Err(Error::ToleranceUnreachable { tol, achieved: worst, nodes: n });
            }
            active = still;
            previous = still_prev;
        } else {
            previous = current;
        }
        n *= 2;
    }
}

/// `c_d = d Γ(d/2 - 1) / (2 π^{d/2})`.
pub(crate) fn far_field_constant(d: usize) -> f64 {
    d as f64 * gamma_half_integer(d as u32 - 2) / (2.0 * std::f64::consts::PI.powf(d as f64 / 2.0))
}

/// Leading far-field behaviour `c_d |x|^{2-d}` with `c_d = d Γ(d/2 - 1) / (2 π^{d/2})`,
/// plus the first anisotropic correction in three dimensions.
pub fn green_asymptotic(x: &[i64]) -> f64 {
    let d = x.len();
    let r2: f64 = x.iter().map(|&v| (v as f64).powi(2)).sum();
    let r = r2.sqrt();
    let c = far_field_constant(d);
    let lead = c / r.powi(d as i32 - 2);
    if d == 3 {
        let q: f64 = x.iter().map(|&v| (v as f64).powi(4)).sum::<f64>() / (r2 * r2);
        lead + 3.0 / (16.0 * std::f64::consts::PI * r2 * r) * (5.0 * q - 3.0)
    } else {
        lead
    }
}

/// Γ(k/2) for a positive integer `k`.
fn gamma_half_integer(k: u32) -> f64 {
    let mut v = if k.is_multiple_of(2) { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut z = if k.is_multiple_of(2) { 1.0 } else { 0.5 };
    while z < k as f64 / 2.0 {
        v *= z;
        z += 1.0;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_half() {
        assert!((gamma_half_integer(1) - std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert_eq!(gamma_half_integer(2), 1.0);
        assert!((gamma_half_integer(3) - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert_eq!(gamma_half_integer(6), 2.0);
    }

    #[test]
    fn canonical_sorts_absolute_values() {
        assert_eq!(canonical(&[3, -1, 0]), vec![0, 1, 3]);
    }

    #[test]
    fn value_independent_of_companions() {
        let alone = green_values(3, &[vec![0, 1, 2]], 1e-11).unwrap();
        let crowd = green_values(3, &[vec![0, 0, 0], vec![0, 1, 2], vec![3, 4, 9]], 1e-11).unwrap();
        assert_eq!(alone[0].to_bits(), crowd[1].to_bits());
    }
}
