//! Deterministic quadratic problems on the scaled lattice `L_N = Z^d / N`.
//!
//! * `gamma_n`: the Laplace functional through its concave-quadratic
//!   supremum, solved by sparse CG on truncation balls of radius `R` and `2R`.
//! * `rate_i_n`: the rate function `I_N(h) = Ẽ_N(√h − 1, √h − 1)`, with the
//!   exact trace value from the dense Green matrix of the window and the
//!   truncated harmonic extension as a cut-off check.
//! * `capacity_scaled`: `d cap(N K ∩ Z^d) / N^{d−2}`.
//! * `rate_i_v`: the level-`v` rate function `v I_N(h / v)`.
//!
//! Potentials `V` are in scaled units; the lattice weight is `V / (d N²)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Region;
use crate::green::{self, ball_sites, equilibrium, green_asymptotic, truncated_check, GaugeOptions};
use crate::lattice::{build_window, ClosedBox, LatticeField, Site, SiteSet};
use crate::solver::{BallGrid, CgOutcome};

/// Radius beyond which the far-field closure uses the asymptotic Green
/// expansion instead of a table.
const FAR_FIELD_MIN_RADIUS: f64 = 10.0;

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub green_tol: f64,
    pub cg_tol: f64,
    pub max_iterations: usize,
    pub lanczos_steps: usize,
    /// Largest inner boundary handled by the dense capacity route.
    pub dense_boundary_limit: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            green_tol: green::DEFAULT_TOL,
            cg_tol: 1e-11,
            max_iterations: 50_000,
            lanczos_steps: 80,
            dense_boundary_limit: 4096,
        }
    }
}

impl SolveOptions {
    fn gauge(&self) -> GaugeOptions {
        GaugeOptions {
            green_tol: self.green_tol,
            cg_tol: self.cg_tol,
            max_iterations: self.max_iterations,
            lanczos_steps: self.lanczos_steps,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QuadraticSolveReport {
    /// Best value; `+∞` for a supercritical potential.
    pub value: f64,
    pub finite: bool,
    /// Maximizer (`gamma_n`, on the window) or minimizer (`rate_i_n`, on the
    /// radius-`R` ball).
    #[serde(skip)]
    pub field: Option<LatticeField>,
    pub truncation_radius: u32,
    pub value_at_r: f64,
    pub refined_value: f64,
    /// `|value(R) − value(2R)| (1 + c_fit / R^{d−2})`.
    pub error_estimate: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Smallest Ritz value of the radius-`2R` operator; evidence for `+∞`.
    pub min_eigen_estimate: Option<f64>,
}

/// Density `h ≥ 0` of a measure on the window with respect to `N^{-d}`
/// times counting measure.
#[derive(Debug, Clone)]
pub struct DensityOnWindow {
    h: LatticeField,
}

impl DensityOnWindow {
    pub fn new(h: LatticeField) -> Result<Self> {
        if let Some(bad) = h.values().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("density must be finite and nonnegative, found {bad}")));
        }
        Ok(DensityOnWindow { h })
    }

    pub fn constant(window: Arc<SiteSet>, c: f64) -> Result<Self> {
        Self::new(LatticeField::constant(window, c)?)
    }

    pub fn field(&self) -> &LatticeField {
        &self.h
    }

    pub fn window(&self) -> &Arc<SiteSet> {
        self.h.domain()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.h.map(|v| c * v)?)
    }
}

/// `d / N^{d−2}`, the factor between `⟨φ, Aφ⟩` on Z^d and `E_N`.
fn energy_scale(dim: usize, n: u32) -> f64 {
    dim as f64 / (n as f64).powi(dim as i32 - 2)
}

fn window_center(window: &SiteSet) -> Result<(Vec<i64>, f64)> {
    let c = window.center().ok_or_else(|| Error::invalid("empty window"))?.0;
    let r = window.radius_about(&c);
    Ok((c, r))
}

fn check_radius(window: &SiteSet, r: u32) -> Result<Vec<i64>> {
    let (c, wr) = window_center(window)?;
    if (r as f64) < 2.0 * wr {
        return Err(Error::invalid(format!("truncation radius {r} is below twice the window radius {wr:.3}")));
    }
    Ok(c)
}

fn error_estimate(dim: usize, r: u32, at_r: f64, at_2r: f64) -> f64 {
    let delta = (at_r - at_2r).abs();
    let rpow = (r as f64).powi(dim as i32 - 2);
    let c_fit = if at_2r != 0.0 { rpow * delta / at_2r.abs() } else { 0.0 };
    delta * (1.0 + c_fit / rpow)
}

/// `Γ_N(V) = ⟨V,1⟩ + sup_φ {2⟨V,φ⟩ + ⟨Vφ,φ⟩ − E_N(φ,φ)}` for `V` in scaled
/// units on the window.
pub fn gamma_n(v: &LatticeField, n: u32, r: u32, opts: &SolveOptions) -> Result<QuadraticSolveReport> {
    if n == 0 {
        return Err(Error::invalid("scale N must be positive"));
    }
    let window = v.domain().clone();
    let dim = v.dim();
    let center = check_radius(&window, r)?;
    let lattice_scale = dim as f64 * (n as f64).powi(2);
    let w = v.map(|x| x / lattice_scale)?;
    let scale = energy_scale(dim, n);
    let gauge = opts.gauge();
    let (at_r, _) = truncated_check(&center, r as f64, &w, &gauge)?;
    let (at_2r, solved) = truncated_check(&center, 2.0 * r as f64, &w, &gauge)?;

    let Some((grid, phi)) = solved else {
        return Ok(QuadraticSolveReport {
            value: f64::INFINITY,
            finite: false,
            field: None,
            truncation_radius: r,
            value_at_r: at_r.lambda_value.map_or(f64::INFINITY, |l| scale * l),
            refined_value: f64::INFINITY,
            error_estimate: f64::NAN,
            iterations: at_2r.iterations,
            residual: at_2r.residual,
            min_eigen_estimate: Some(at_2r.min_eigen_estimate),
        });
    };
    let value_at_r = scale * at_r.lambda_value.expect("PD at 2R implies PD at R");
    let refined_value = scale * at_2r.lambda_value.expect("PD check carries a value");
    let closed = closed_gauge_charge(&center, 2.0 * r as f64, &w, opts)?;
    let field = match &closed {
        Some((_, grid, phi)) => {
            LatticeField::from_fn(window.clone(), |x| grid.unknown_index(x).map_or(0.0, |i| phi[i]))?
        }
        None => LatticeField::from_fn(window.clone(), |x| grid.unknown_index(x).map_or(0.0, |i| phi[i]))?,
    };
    let value = closed.map_or(refined_value, |(q, _, _)| scale * q);
    Ok(QuadraticSolveReport {
        value,
        finite: true,
        field: Some(field),
        truncation_radius: r,
        value_at_r,
        refined_value,
        error_estimate: error_estimate(dim, r, value_at_r, refined_value),
        iterations: at_2r.iterations,
        residual: at_2r.residual,
        min_eigen_estimate: Some(at_2r.min_eigen_estimate),
    })
}

/// Total charge `q = Σ W γ` with a multipole far-field closure.
///
/// Far from the support `φ = G(Wγ) ≈ q g(x − c) + p · ∇̃g(x − c)` with the
/// dipole moment `p_k = Σ W γ (x_k − c_k)`. On a ball whose outer shell carries
/// `Σ_j a_j f_j` (monopole and dipole profiles `f_j`), the solution is
/// `φ₀ + Σ_j a_j φ_j`, and requiring the moments of `Wγ` to reproduce `a` gives
/// a `(d+1)`-square linear system. `None` if any solve is not positive definite.
fn closed_gauge_charge(
    center: &[i64],
    radius: f64,
    w: &LatticeField,
    opts: &SolveOptions,
) -> Result<Option<(f64, BallGrid, Vec<f64>)>> {
    let dim = w.dim();
    let outer = radius.max(FAR_FIELD_MIN_RADIUS);
    let (shell, monopole) = far_field_shell(center, outer, dim)?;
    let mut profiles = vec![monopole];
    let dipole_scale = (dim as f64 - 2.0) * green::far_field_constant(dim);
    for k in 0..dim {
        profiles.push(
            shell
                .iter()
                .map(|x| {
                    let off: Vec<f64> = x.iter().zip(center).map(|(a, c)| (a - c) as f64).collect();
                    let r2: f64 = off.iter().map(|v| v * v).sum();
                    dipole_scale * off[k] / r2.powf(dim as f64 / 2.0)
                })
                .collect(),
        );
    }
    let zero_shell = vec![0.0; shell.len()];
    let base = BallGrid::new(center, outer + 1.5, Some((&shell, &zero_shell)))?;
    let n = base.unknowns();
    let mut weights = vec![0.0; n];
    let mut moments = vec![vec![0.0; n]; dim + 1];
    for (x, &val) in w.domain().iter().zip(w.values()) {
        if val != 0.0 {
            let i = base.unknown_index(x).ok_or_else(|| Error::invalid("potential support exceeds truncation ball"))?;
            weights[i] = val;
            moments[0][i] = val;
            for k in 0..dim {
                moments[k + 1][i] = val * (x[k] - center[k]) as f64;
            }
        }
    }
    let solve = |grid: &BallGrid, b: &[f64]| -> Result<Option<Vec<f64>>> {
        match grid.cg(&weights, b, opts.cg_tol, opts.max_iterations) {
            CgOutcome::Converged { solution, .. } => Ok(Some(solution)),
            CgOutcome::NegativeCurvature { .. } => Ok(None),
            CgOutcome::Stalled { iterations, residual } => Err(Error::NoConvergence { iterations, residual }),
        }
    };
    let Some(phi0) = solve(&base, &weights)? else { return Ok(None) };
    let mut basis = Vec::with_capacity(dim + 1);
    for profile in &profiles {
        let grid = BallGrid::new(center, outer + 1.5, Some((&shell, profile)))?;
        let Some(phi) = solve(&grid, grid.boundary_rhs())? else { return Ok(None) };
        basis.push(phi);
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let m = dim + 1;
    let system = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { 0.0 } - dot(&moments[i], &basis[j]));
    let rhs = DVector::from_fn(m, |i, _| moments[i].iter().sum::<f64>() + dot(&moments[i], &phi0));
    let a = system.lu().solve(&rhs).ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    let mut phi = phi0;
    for (j, b) in basis.iter().enumerate() {
        for (p, v) in phi.iter_mut().zip(b) {
            *p += a[j] * v;
        }
    }
    Ok(Some((a[0], base, phi)))
}

/// Sites `outer < |x − c| <= outer + 1.5` and the far-field Green values there.
fn far_field_shell(center: &[i64], outer: f64, dim: usize) -> Result<(SiteSet, Vec<f64>)> {
    let shell = ball_sites(center, outer + 1.5)?;
    let shell = SiteSet::new(
        dim,
        shell
            .iter()
            .filter(|x| {
                let d2: f64 = x.iter().zip(center).map(|(a, c)| ((a - c) as f64).powi(2)).sum();
                d2 > outer * outer
            })
            .map(|x| Site(x.to_vec())),
    )?;
    let far = shell
        .iter()
        .map(|x| {
            let off: Vec<i64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
            green_asymptotic(&off)
        })
        .collect();
    Ok((shell, far))
}

/// Exact `ψᵀ G_B⁻¹ ψ` together with the charge `G_B⁻¹ ψ`.
fn trace_form(psi: &LatticeField, tol: f64) -> Result<(f64, DVector<f64>)> {
    let g = green::green_matrix(psi.domain().clone(), tol)?;
    let (chol, _) = green::factor(g.entries().clone())?;
    let p = DVector::from_column_slice(psi.values());
    let charge = chol.solve(&p);
    Ok((p.dot(&charge), charge))
}

fn psi_of(density: &DensityOnWindow) -> Result<LatticeField> {
    density.field().map(|h| h.sqrt() - 1.0)
}

/// Energy of the harmonic extension of `psi` off the window inside the ball
/// of radius `radius`, zero outside. Returns the energy, the solution and the grid.
fn truncated_extension(
    center: &[i64],
    radius: f64,
    psi: &LatticeField,
    n: u32,
    opts: &SolveOptions,
) -> Result<(f64, BallGrid, Vec<f64>, usize, f64)> {
    let grid = BallGrid::new(center, radius, Some((psi.domain(), psi.values())))?;
    let zero = vec![0.0; grid.unknowns()];
    let (x, iterations, residual) = match grid.cg(&zero, grid.boundary_rhs(), opts.cg_tol, opts.max_iterations) {
        CgOutcome::Converged { solution, iterations, residual } => (solution, iterations, residual),
        CgOutcome::NegativeCurvature { .. } => return Err(Error::invalid("Laplacian lost positivity")),
        CgOutcome::Stalled { iterations, residual } => return Err(Error::NoConvergence { iterations, residual }),
    };
    let dim = psi.dim();
    let energy = grid.gradient_square_sum(&x) / (2.0 * (n as f64).powi(dim as i32 - 2));
    Ok((energy, grid, x, iterations, residual))
}

/// `I_N(h)`: Dirichlet energy of the minimal extension of `√h − 1`.
pub fn rate_i_n(density: &DensityOnWindow, n: u32, r: u32, opts: &SolveOptions) -> Result<QuadraticSolveReport> {
    if n == 0 {
        return Err(Error::invalid("scale N must be positive"));
    }
    let psi = psi_of(density)?;
    let window = psi.domain().clone();
    let dim = psi.dim();
    let center = check_radius(&window, r)?;
    let value = if psi.values().iter().all(|&p| p == 0.0) {
        0.0
    } else {
        energy_scale(dim, n) * trace_form(&psi, opts.green_tol)?.0
    };
    let (value_at_r, _, _, _, _) = truncated_extension(&center, r as f64, &psi, n, opts)?;
    let (refined_value, grid, x, iterations, residual) = truncated_extension(&center, 2.0 * r as f64, &psi, n, opts)?;
    let ball = Arc::new(ball_sites(&center, r as f64)?);
    let field = LatticeField::from_fn(ball, |y| match grid.unknown_index(y) {
        Some(i) => x[i],
        None => psi.at(y),
    })?;
    Ok(QuadraticSolveReport {
        value,
        finite: true,
        field: Some(field),
        truncation_radius: r,
        value_at_r,
        refined_value,
        error_estimate: error_estimate(dim, r, value_at_r, refined_value),
        iterations,
        residual,
        min_eigen_estimate: None,
    })
}

/// The potential (scaled units) at which `⟨V, h⟩ − Γ_N(V)` attains `I_N(h)`:
/// `V = d N² μ / √h` with `μ = G_B⁻¹ (√h − 1)`.
pub fn duality_potential(density: &DensityOnWindow, n: u32, opts: &SolveOptions) -> Result<LatticeField> {
    let psi = psi_of(density)?;
    let dim = psi.dim();
    let (_, charge) = trace_form(&psi, opts.green_tol)?;
    let lattice_scale = dim as f64 * (n as f64).powi(2);
    let mut values = Vec::with_capacity(charge.len());
    for (mu, h) in charge.iter().zip(density.field().values()) {
        if *h == 0.0 {
            return Err(Error::invalid("duality potential needs a strictly positive density"));
        }
        values.push(lattice_scale * mu / h.sqrt());
    }
    LatticeField::new(psi.domain().clone(), values)
}

/// `v I_N(h / v)`.
pub fn rate_i_v(density: &DensityOnWindow, v: f64, n: u32, r: u32, opts: &SolveOptions) -> Result<f64> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("level v = {v} must be positive")));
    }
    Ok(v * rate_i_n(&density.scaled(1.0 / v)?, n, r, opts)?.value)
}

/// Values at `N` and `2N` and their extrapolation with an `O(1/N)` error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ContinuumEstimate {
    pub n: u32,
    pub at_n: f64,
    pub at_2n: f64,
    pub extrapolated: f64,
}

impl ContinuumEstimate {
    fn new(n: u32, at_n: f64, at_2n: f64) -> Self {
        ContinuumEstimate { n, at_n, at_2n, extrapolated: 2.0 * at_2n - at_n }
    }

    /// `|at_N − at_2N| / |at_2N|`.
    pub fn relative_change(&self) -> f64 {
        ((self.at_n - self.at_2n) / self.at_2n).abs()
    }
}

/// `rate_i_v` for a density given as a function on the box, at `N` and `2N`.
pub fn rate_i_v_refined(
    bx: &ClosedBox,
    h: impl Fn(&[f64]) -> f64,
    v: f64,
    n: u32,
    opts: &SolveOptions,
) -> Result<ContinuumEstimate> {
    let at = |m: u32| -> Result<f64> {
        let window = Arc::new(build_window(bx, m)?);
        let mf = m as f64;
        let field = LatticeField::from_fn(window.clone(), |x| {
            let y: Vec<f64> = x.iter().map(|&c| c as f64 / mf).collect();
            h(&y)
        })?;
        let (_, wr) = window_center(&window)?;
        let r = (2.0 * wr).ceil().max(2.0) as u32;
        rate_i_v(&DensityOnWindow::new(field)?, v, m, r, opts)
    };
    Ok(ContinuumEstimate::new(n, at(n)?, at(2 * n)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityRoute {
    /// Dense equilibrium solve on the inner boundary.
    Dense,
    /// Sparse exterior Dirichlet problem with a far-field closure.
    Exterior,
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacityReport {
    /// `d cap(N K ∩ Z^d) / N^{d−2}`.
    pub value: f64,
    /// Lattice capacity before scaling.
    pub lattice_capacity: f64,
    pub sites: usize,
    pub boundary_sites: usize,
    pub route: CapacityRoute,
    /// Radius of the exterior solve, when used.
    pub outer_radius: Option<f64>,
    pub iterations: usize,
}

pub fn capacity_scaled(region: &Region, n: u32, opts: &SolveOptions) -> Result<CapacityReport> {
    if n == 0 {
        return Err(Error::invalid("scale N must be positive"));
    }
    let raster = region.rasterize(n)?;
    if raster.is_empty() {
        return Err(Error::invalid(format!("region has no lattice sites at scale N = {n}")));
    }
    let dim = raster.dim();
    let boundary_sites = raster.inner_boundary().len();
    let sites = raster.len();
    let scale = energy_scale(dim, n);
    if boundary_sites <= opts.dense_boundary_limit.min(green::MAX_DENSE_SITES) {
        let cap = equilibrium(Arc::new(raster), opts.green_tol)?.capacity();
        return Ok(CapacityReport {
            value: scale * cap,
            lattice_capacity: cap,
            sites,
            boundary_sites,
            route: CapacityRoute::Dense,
            outer_radius: None,
            iterations: 0,
        });
    }
    let (cap, outer, iterations) = exterior_capacity(&raster, opts)?;
    Ok(CapacityReport {
        value: scale * cap,
        lattice_capacity: cap,
        sites,
        boundary_sites,
        route: CapacityRoute::Exterior,
        outer_radius: Some(outer),
        iterations,
    })
}

/// Lattice capacity of `set` from two exterior Dirichlet solves.
///
/// On a ball of radius `R` about the set, `h₀` is 1 on the set and 0 on the
/// outer shell, `h₁` is 0 on the set and `ĝ(x − c)` on the shell. The
/// equilibrium potential is close to `h₀ + cap · h₁`, and the net flux out of
/// the set is `cap`, so `cap = F₀ / (1 − F₁)` with `F_i` the flux of `h_i`.
pub fn exterior_capacity(set: &SiteSet, opts: &SolveOptions) -> Result<(f64, f64, usize)> {
    let center = set.center().ok_or_else(|| Error::invalid("empty set"))?.0;
    let rk = set.radius_about(&center);
    let outer = (2.0 * rk).max(rk + FAR_FIELD_MIN_RADIUS).ceil();
    let shell_radius = outer + 1.5;
    let (shell, far) = far_field_shell(&center, outer, set.dim())?;
    let fixed = SiteSet::new(set.dim(), set.iter().chain(shell.iter()).map(|x| Site(x.to_vec())))?;
    let mut values0 = vec![0.0; fixed.len()];
    let mut values1 = vec![0.0; fixed.len()];
    for x in set.iter() {
        values0[fixed.position(x).expect("set site is fixed")] = 1.0;
    }
    for (x, g) in shell.iter().zip(&far) {
        values1[fixed.position(x).expect("shell site is fixed")] = *g;
    }
    let mut iterations = 0;
    let mut flux = [0.0; 2];
    for (k, values) in [values0, values1].iter().enumerate() {
        let grid = BallGrid::new(&center, shell_radius, Some((&fixed, values)))?;
        let zero = vec![0.0; grid.unknowns()];
        let x = match grid.cg(&zero, grid.boundary_rhs(), opts.cg_tol, opts.max_iterations) {
            CgOutcome::Converged { solution, iterations: it, .. } => {
                iterations += it;
                solution
            }
            CgOutcome::NegativeCurvature { .. } => return Err(Error::invalid("Laplacian lost positivity")),
            CgOutcome::Stalled { iterations, residual } => return Err(Error::NoConvergence { iterations, residual }),
        };
        flux[k] = grid.flux_over(&x, set);
    }
    Ok((flux[0] / (1.0 - flux[1]), outer, iterations))
}

/// `capacity_scaled` at `N` and `2N`.
pub fn capacity_scaled_refined(region: &Region, n: u32, opts: &SolveOptions) -> Result<ContinuumEstimate> {
    let a = capacity_scaled(region, n, opts)?.value;
    let b = capacity_scaled(region, 2 * n, opts)?.value;
    Ok(ContinuumEstimate::new(n, a, b))
}
