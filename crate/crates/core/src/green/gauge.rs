//! Gauge function `γ = 1 + G(Vγ)` and the Laplace functional `Λ(V) = Σ V γ`.
//!
//! The verdict and value come from an exact solve on the support `S` of `V`:
//! with `G_S = L Lᵀ`, the operator `A - V` is positive definite on Z^d iff
//! `M = I - Lᵀ V L` is, and then `γ_S = L M⁻¹ L⁻¹ 1`. Truncated sparse solves
//! on balls of radius `R` and `2R` with zero exterior data are reported next to
//! it as the cut-off check.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

use super::{check_dense, matrix_from_table, GreenTable};
use crate::error::{Error, Result};
use crate::lattice::{LatticeField, Site, SiteSet};
use crate::solver::{BallGrid, CgOutcome};

#[derive(Debug, Clone, Copy)]
pub struct GaugeOptions {
    pub green_tol: f64,
    pub cg_tol: f64,
    pub max_iterations: usize,
    pub lanczos_steps: usize,
}

impl Default for GaugeOptions {
    fn default() -> Self {
        GaugeOptions { green_tol: super::DEFAULT_TOL, cg_tol: 1e-12, max_iterations: 20_000, lanczos_steps: 80 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GaugeVerdict {
    Subcritical,
    /// Not positive definite on Z^d; the flags record whether the truncated
    /// operators at `R` and `2R` also failed.
    Supercritical {
        at_r: bool,
        at_2r: bool,
    },
}

/// Outcome of the sparse solve on one truncation ball.
#[derive(Debug, Clone, Serialize)]
pub struct TruncatedCheck {
    pub radius: f64,
    pub positive_definite: bool,
    pub lambda_value: Option<f64>,
    pub min_eigen_estimate: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct GaugeResult {
    /// Ball of radius `R` about the support centre.
    pub domain: Arc<SiteSet>,
    pub phi_star: Option<LatticeField>,
    pub gamma: Option<LatticeField>,
    /// `Σ V γ`; `+∞` when supercritical.
    pub lambda_value: f64,
    pub verdict: GaugeVerdict,
    pub truncation_radius: u32,
    /// Relative gap between the radius-`R` truncated value and `lambda_value`.
    pub error_factor: f64,
    /// `max_S |γ - 1 - G(Vγ)|` of the exact solve.
    pub residual: f64,
    pub truncated: [TruncatedCheck; 2],
}

impl GaugeResult {
    pub fn subcritical(&self) -> bool {
        self.verdict == GaugeVerdict::Subcritical
    }
}

pub fn gauge_solve(v: &LatticeField, radius: u32) -> Result<GaugeResult> {
    gauge_solve_with(v, radius, GaugeOptions::default())
}

pub(crate) fn ball_sites(center: &[i64], radius: f64) -> Result<SiteSet> {
    let r = radius.floor() as i64;
    let dim = center.len();
    let mut sites = Vec::new();
    let mut off = vec![-r; dim];
    loop {
        let d2: i64 = off.iter().map(|o| o * o).sum();
        if (d2 as f64) <= radius * radius {
            sites.push(Site(center.iter().zip(&off).map(|(c, o)| c + o).collect()));
        }
        let mut k = dim;
        loop {
            if k == 0 {
                return SiteSet::new(dim, sites);
            }
            k -= 1;
            off[k] += 1;
            if off[k] <= r {
                break;
            }
            off[k] = -r;
        }
    }
}

pub(crate) fn truncated_check(
    center: &[i64],
    radius: f64,
    potential: &LatticeField,
    opts: &GaugeOptions,
) -> Result<(TruncatedCheck, Option<(BallGrid, Vec<f64>)>)> {
    let grid = BallGrid::new(center, radius, None)?;
    let n = grid.unknowns();
    let mut w = vec![0.0; n];
    for (x, &val) in potential.domain().iter().zip(potential.values()) {
        if val != 0.0 {
            let i = grid.unknown_index(x).ok_or_else(|| Error::invalid("potential support exceeds truncation ball"))?;
            w[i] = val;
        }
    }
    let mut start = vec![1e-3; n];
    for (s, &wi) in start.iter_mut().zip(&w) {
        *s += wi.abs();
    }
    let min_eig = grid.min_eigen_estimate(&w, &start, opts.lanczos_steps);
    let outcome = grid.cg(&w, &w, opts.cg_tol, opts.max_iterations);
    Ok(match outcome {
        CgOutcome::Converged { solution, iterations, residual } if min_eig > 0.0 => {
            let lambda: f64 = w.iter().zip(&solution).map(|(a, p)| a * (1.0 + p)).sum();
            let check = TruncatedCheck {
                radius,
                positive_definite: true,
                lambda_value: Some(lambda),
                min_eigen_estimate: min_eig,
                iterations,
                residual,
            };
            (check, Some((grid, solution)))
        }
        CgOutcome::Converged { iterations, residual, .. } => (
            TruncatedCheck {
                radius,
                positive_definite: false,
                lambda_value: None,
                min_eigen_estimate: min_eig,
                iterations,
                residual,
            },
            None,
        ),
        CgOutcome::NegativeCurvature { iterations } => (
            TruncatedCheck {
                radius,
                positive_definite: false,
                lambda_value: None,
                min_eigen_estimate: min_eig,
                iterations,
                residual: f64::NAN,
            },
            None,
        ),
        CgOutcome::Stalled { iterations, residual } => {
            return Err(Error::NoConvergence { iterations, residual });
        }
    })
}

/// Solve the gauge equation for a potential in lattice units.
pub fn gauge_solve_with(v: &LatticeField, radius: u32, opts: GaugeOptions) -> Result<GaugeResult> {
    let dim = v.dim();
    let support = v.support()?;
    let center =
        support.center().map(|c| c.0).or_else(|| v.domain().center().map(|c| c.0)).unwrap_or_else(|| vec![0; dim]);
    let r = radius as f64;
    if support.radius_about(&center) > r / 2.0 {
        return Err(Error::invalid(format!(
            "potential support radius {} exceeds half the truncation radius {radius}",
            support.radius_about(&center)
        )));
    }
    let domain = Arc::new(ball_sites(&center, r)?);
    let checks = [truncated_check(&center, r, v, &opts)?, truncated_check(&center, 2.0 * r, v, &opts)?];
    let truncated = [checks[0].0.clone(), checks[1].0.clone()];

    if support.is_empty() {
        let gamma = LatticeField::constant(domain.clone(), 1.0)?;
        let phi = LatticeField::constant(domain.clone(), 0.0)?;
        return Ok(GaugeResult {
            domain,
            phi_star: Some(phi),
            gamma: Some(gamma),
            lambda_value: 0.0,
            verdict: GaugeVerdict::Subcritical,
            truncation_radius: radius,
            error_factor: 0.0,
            residual: 0.0,
            truncated,
        });
    }

    check_dense("gauge support", support.len())?;
    let reach = (r + support.radius_about(&center)).ceil() as u32 + 1;
    let table = GreenTable::shared(dim, reach, opts.green_tol)?;
    let g = matrix_from_table(&table, &support)?;
    let w: Vec<f64> = support.iter().map(|x| v.at(x)).collect();
    let (chol, _) = super::factor(g.clone())?;
    let l = chol.l();
    let n = support.len();
    let mut m = DMatrix::<f64>::identity(n, n);
    // M = I - Lᵀ W L
    let wl = DMatrix::from_fn(n, n, |i, j| w[i] * l[(i, j)]);
    m -= l.transpose() * wl;
    let m = (&m + m.transpose()) * 0.5;

    let Some(mchol) = Cholesky::new(m) else {
        return Ok(GaugeResult {
            domain,
            phi_star: None,
            gamma: None,
            lambda_value: f64::INFINITY,
            verdict: GaugeVerdict::Supercritical {
                at_r: !truncated[0].positive_definite,
                at_2r: !truncated[1].positive_definite,
            },
            truncation_radius: radius,
            error_factor: f64::NAN,
            residual: f64::NAN,
            truncated,
        });
    };
    let ones = DVector::from_element(n, 1.0);
    let y = l.solve_lower_triangular(&ones).ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    let gamma_s = &l * mchol.solve(&y);
    let wg = DVector::from_iterator(n, (0..n).map(|i| w[i] * gamma_s[i]));
    let lambda_value: f64 = wg.iter().sum();
    let residual = (&gamma_s - &ones - &g * &wg).amax();

    let mut gamma_vals = Vec::with_capacity(domain.len());
    for y in domain.iter() {
        let mut s = 1.0;
        for (k, x) in support.iter().enumerate() {
            s += table.between(y, x)? * wg[k];
        }
        gamma_vals.push(s);
    }
    let gamma = LatticeField::new(domain.clone(), gamma_vals)?;
    let phi = gamma.map(|x| x - 1.0)?;
    let error_factor = match truncated[0].lambda_value {
        Some(t) if lambda_value != 0.0 => ((t - lambda_value) / lambda_value).abs(),
        Some(t) => (t - lambda_value).abs(),
        None => f64::INFINITY,
    };
    Ok(GaugeResult {
        domain,
        phi_star: Some(phi),
        gamma: Some(gamma),
        lambda_value,
        verdict: GaugeVerdict::Subcritical,
        truncation_radius: radius,
        error_factor,
        residual,
        truncated,
    })
}
