//! Sparse solves for `A - W` on a truncated ball of Z^d, where `A = I - P` is
//! the generator of the simple random walk and `W` a diagonal potential.
//!
//! Sites of the ball are either unknowns or carry fixed values; everything
//! outside the ball is held at zero. The system is solved by Jacobi
//! preconditioned conjugate gradients, which also serves as the
//! positive-definiteness probe: a non-positive curvature direction proves the
//! operator is not positive definite.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::lattice::SiteSet;

const UNKNOWN_NONE: u32 = u32::MAX;
const OUTSIDE: i32 = -2;
const FIXED: i32 = -1;

/// Cubic cell grid covering a ball plus one layer of exterior cells.
#[derive(Debug)]
pub(crate) struct BallGrid {
    dim: usize,
    lo: Vec<i64>,
    side: usize,
    strides: Vec<usize>,
    code: Vec<i32>,
    fixed_value: Vec<f64>,
    unknown_cell: Vec<usize>,
    neighbors: Vec<u32>,
    fixed_rhs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) enum CgOutcome {
    Converged { solution: Vec<f64>, iterations: usize, residual: f64 },
    NegativeCurvature { iterations: usize },
    Stalled { iterations: usize, residual: f64 },
}

impl BallGrid {
    /// Ball `|x - center| <= radius`; sites of `fixed` inside the ball keep
    /// the supplied values, the rest are unknowns.
    pub(crate) fn new(center: &[i64], radius: f64, fixed: Option<(&SiteSet, &[f64])>) -> Result<Self> {
        let dim = center.len();
        let r = radius.floor() as i64;
        let side = (2 * r + 3) as usize;
        let cells = side.checked_pow(dim as u32).filter(|&c| c <= 200_000_000).ok_or(Error::TooLarge {
            what: "truncation ball",
            size: usize::MAX,
            cap: 200_000_000,
        })?;
        let lo: Vec<i64> = center.iter().map(|c| c - r - 1).collect();
        let mut strides = vec![1usize; dim];
        for k in (0..dim.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * side;
        }
        let mut code = vec![OUTSIDE; cells];
        let mut fixed_value = vec![0.0; 0];
        let r2 = radius * radius;
        let mut coords = vec![0i64; dim];
        let mut unknown_cell = Vec::new();
        for cell in 0..cells {
            let mut rem = cell;
            let mut dist2 = 0.0;
            for k in 0..dim {
                let q = rem / strides[k];
                rem %= strides[k];
                coords[k] = lo[k] + q as i64;
                dist2 += ((coords[k] - center[k]) as f64).powi(2);
            }
            if dist2 > r2 {
                continue;
            }
            if let Some((set, values)) = fixed {
                if let Some(p) = set.position(&coords) {
                    if fixed_value.is_empty() {
                        fixed_value = vec![0.0; cells];
                    }
                    code[cell] = FIXED;
                    fixed_value[cell] = values[p];
                    continue;
                }
            }
            code[cell] = unknown_cell.len() as i32;
            unknown_cell.push(cell);
        }
        if fixed_value.is_empty() {
            fixed_value = vec![0.0; cells];
        }
        let inv = 1.0 / (2.0 * dim as f64);
        let mut neighbors = vec![UNKNOWN_NONE; unknown_cell.len() * 2 * dim];
        let mut fixed_rhs = vec![0.0; unknown_cell.len()];
        for (i, &cell) in unknown_cell.iter().enumerate() {
            for k in 0..dim {
                for (s, nb) in [cell - strides[k], cell + strides[k]].into_iter().enumerate() {
                    match code[nb] {
                        c if c >= 0 => neighbors[i * 2 * dim + 2 * k + s] = c as u32,
                        FIXED => fixed_rhs[i] += inv * fixed_value[nb],
                        _ => {}
                    }
                }
            }
        }
        Ok(BallGrid { dim, lo, side, strides, code, fixed_value, unknown_cell, neighbors, fixed_rhs })
    }

    pub(crate) fn unknowns(&self) -> usize {
        self.unknown_cell.len()
    }

    fn cell_of(&self, x: &[i64]) -> Option<usize> {
        let mut cell = 0;
        for k in 0..self.dim {
            let q = x[k] - self.lo[k];
            if q < 0 || q as usize >= self.side {
                return None;
            }
            cell += q as usize * self.strides[k];
        }
        Some(cell)
    }

    /// Unknown index of a site, if it is one.
    pub(crate) fn unknown_index(&self, x: &[i64]) -> Option<usize> {
        self.cell_of(x).and_then(|c| (self.code[c] >= 0).then_some(self.code[c] as usize))
    }

    /// Right-hand side contribution `P(fixed values)` on the unknowns.
    pub(crate) fn boundary_rhs(&self) -> &[f64] {
        &self.fixed_rhs
    }

    /// `y = (A - W) x` on the unknowns with zero data elsewhere.
    pub(crate) fn apply(&self, weights: &[f64], x: &[f64], y: &mut [f64]) {
        let inv = 1.0 / (2.0 * self.dim as f64);
        let deg = 2 * self.dim;
        for i in 0..x.len() {
            let mut s = 0.0;
            for &j in &self.neighbors[i * deg..(i + 1) * deg] {
                if j != UNKNOWN_NONE {
                    s += x[j as usize];
                }
            }
            y[i] = (1.0 - weights[i]) * x[i] - inv * s;
        }
    }

    /// Preconditioned conjugate gradients for `(A - W) x = b`.
    pub(crate) fn cg(&self, weights: &[f64], b: &[f64], rel_tol: f64, max_iter: usize) -> CgOutcome {
        let n = b.len();
        let diag: Vec<f64> = weights.iter().map(|w| 1.0 - w).collect();
        if diag.iter().any(|&v| v <= 0.0) {
            return CgOutcome::NegativeCurvature { iterations: 0 };
        }
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return CgOutcome::Converged { solution: x, iterations: 0, residual: 0.0 };
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut rnorm = bnorm;
        for it in 1..=max_iter {
            self.apply(weights, &p, &mut ap);
            let curv: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            let pnorm2: f64 = p.iter().map(|v| v * v).sum();
            if curv <= 1e-14 * pnorm2 {
                return CgOutcome::NegativeCurvature { iterations: it };
            }
            let alpha = rz / curv;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= rel_tol * bnorm {
                // Recompute the true residual to guard against drift.
                self.apply(weights, &x, &mut ap);
                let true_res = b.iter().zip(&ap).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt() / bnorm;
                return CgOutcome::Converged { solution: x, iterations: it, residual: true_res };
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        CgOutcome::Stalled { iterations: max_iter, residual: rnorm / bnorm }
    }

    /// Smallest Ritz value of `A - W` after `steps` Lanczos iterations; an
    /// upper bound for the smallest eigenvalue.
    pub(crate) fn min_eigen_estimate(&self, weights: &[f64], start: &[f64], steps: usize) -> f64 {
        let n = start.len();
        let norm = start.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0 || norm == 0.0 {
            return f64::NAN;
        }
        let mut q: Vec<f64> = start.iter().map(|v| v / norm).collect();
        let mut q_prev = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut alphas = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut beta = 0.0;
        for _ in 0..steps.min(n) {
            self.apply(weights, &q, &mut w);
            let alpha: f64 = w.iter().zip(&q).map(|(a, b)| a * b).sum();
            for i in 0..n {
                w[i] -= alpha * q[i] + beta * q_prev[i];
            }
            alphas.push(alpha);
            beta = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if beta < 1e-12 {
                break;
            }
            betas.push(beta);
            std::mem::swap(&mut q_prev, &mut q);
            for i in 0..n {
                q[i] = w[i] / beta;
            }
        }
        let k = alphas.len();
        let mut t = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alphas[i];
            if i + 1 < k {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        SymmetricEigen::new(t).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Cell values of the full field: fixed data, the given unknowns, zero outside.
    fn cell_values(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.fixed_value.clone();
        for (i, &cell) in self.unknown_cell.iter().enumerate() {
            v[cell] = x[i];
        }
        v
    }

    /// Sum of squared increments over unordered neighbour pairs of Z^d.
    pub(crate) fn gradient_square_sum(&self, x: &[f64]) -> f64 {
        let v = self.cell_values(x);
        let mut total = 0.0;
        for cell in 0..v.len() {
            for k in 0..self.dim {
                let q = (cell / self.strides[k]) % self.side;
                if q + 1 < self.side {
                    let d = v[cell + self.strides[k]] - v[cell];
                    total += d * d;
                }
            }
        }
        total
    }

    /// Net flux `Σ_{x ∈ set} (A f)(x)` with `f` the full field; sites of
    /// `set` must lie in the ball.
    pub(crate) fn flux_over(&self, x: &[f64], set: &SiteSet) -> f64 {
        let v = self.cell_values(x);
        let inv = 1.0 / (2.0 * self.dim as f64);
        let mut total = 0.0;
        for site in set.iter() {
            let cell = self.cell_of(site).expect("site inside the grid");
            let mut s = 0.0;
            for k in 0..self.dim {
                s += v[cell - self.strides[k]] + v[cell + self.strides[k]];
            }
            total += v[cell] - inv * s;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Site;

    #[test]
    fn counts_ball_sites() {
        let g = BallGrid::new(&[0, 0, 0], 1.0, None).unwrap();
        assert_eq!(g.unknowns(), 7);
    }

    #[test]
    fn cg_solves_single_site() {
        // (1 - w) x = b at an isolated site.
        let g = BallGrid::new(&[0, 0, 0], 0.5, None).unwrap();
        assert_eq!(g.unknowns(), 1);
        match g.cg(&[0.25], &[1.5], 1e-12, 10) {
            CgOutcome::Converged { solution, .. } => assert!((solution[0] - 2.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert!(matches!(g.cg(&[1.5], &[1.0], 1e-12, 10), CgOutcome::NegativeCurvature { .. }));
    }

    #[test]
    fn lanczos_detects_indefinite() {
        let g = BallGrid::new(&[0, 0, 0], 6.0, None).unwrap();
        let n = g.unknowns();
        let origin = g.unknown_index(&[0, 0, 0]).unwrap();
        let mut w = vec![0.0; n];
        w[origin] = 0.99;
        let mut start = vec![1e-3; n];
        start[origin] = 1.0;
        assert!(g.min_eigen_estimate(&w, &start, 60) < 0.0);
        let zero = vec![0.0; n];
        assert!(g.min_eigen_estimate(&zero, &start, 60) > 0.0);
    }

    #[test]
    fn flux_of_fixed_point() {
        let set = SiteSet::new(3, vec![Site::origin(3)]).unwrap();
        let g = BallGrid::new(&[0, 0, 0], 3.0, Some((&set, &[1.0]))).unwrap();
        let zero = vec![0.0; g.unknowns()];
        assert!((g.flux_over(&zero, &set) - 1.0).abs() < 1e-15);
        assert!((g.gradient_square_sum(&zero) - 6.0).abs() < 1e-15);
        assert_eq!(g.boundary_rhs().iter().filter(|&&v| v > 0.0).count(), 6);
    }
}
