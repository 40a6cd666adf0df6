//! Green function of the simple random walk, equilibrium measures,
//! capacities and first-entrance distributions.

mod cache;
mod gauge;
mod quadrature;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::lattice::{Site, SiteSet, MIN_DIM};

pub use cache::CACHE_ENV;
pub(crate) use gauge::{ball_sites, truncated_check};
pub use gauge::{gauge_solve, gauge_solve_with, GaugeOptions, GaugeResult, GaugeVerdict, TruncatedCheck};
pub(crate) use quadrature::far_field_constant;
pub use quadrature::green_asymptotic;

/// Default quadrature tolerance for Green values.
pub const DEFAULT_TOL: f64 = 1e-11;
/// Largest site count accepted by dense Green solves.
pub const MAX_DENSE_SITES: usize = 8192;
/// Largest equilibrium condition estimate accepted.
const MAX_CONDITION: f64 = 1e12;
/// Slack for negative equilibrium mass and for hitting probabilities above one.
const NEGATIVE_SLACK: f64 = 1e-10;
const HITTING_SLACK: f64 = 1e-9;

/// Green values `g(0, x)` for all `x` with `max |x_i| <= extent`.
#[derive(Debug)]
pub struct GreenTable {
    dim: usize,
    extent: u32,
    tol: f64,
    values: Vec<f64>,
}

fn canonical_entries(dim: usize, extent: u32) -> Vec<Vec<u32>> {
    fn rec(dim: usize, start: u32, extent: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == dim {
            out.push(cur.clone());
            return;
        }
        for v in start..=extent {
            cur.push(v);
            rec(dim, v, extent, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, 0, extent, &mut Vec::new(), &mut out);
    out
}

impl GreenTable {
    /// Compute (or load from the cache directory) the table for `extent`.
    pub fn compute(dim: usize, extent: u32, tol: f64) -> Result<Self> {
        if dim < MIN_DIM {
            return Err(Error::invalid(format!("dimension must be at least {MIN_DIM}, got {dim}")));
        }
        let side = extent as usize + 1;
        let len = side.pow(dim as u32);
        if let Some(dir) = cache::cache_dir() {
            if let Some(values) = cache::load(&dir, dim, extent, tol, len)? {
                return Ok(GreenTable { dim, extent, tol, values });
            }
        }
        let entries = canonical_entries(dim, extent);
        let computed = quadrature::green_values(dim, &entries, tol)?;
        let lookup: HashMap<&[u32], f64> = entries.iter().map(|e| e.as_slice()).zip(computed.iter().copied()).collect();
        let mut values = vec![0.0; len];
        let mut coords = vec![0u32; dim];
        for (idx, slot) in values.iter_mut().enumerate() {
            let mut rem = idx;
            for k in (0..dim).rev() {
                coords[k] = (rem % side) as u32;
                rem /= side;
            }
            let mut key = coords.clone();
            key.sort_unstable();
            *slot = lookup[key.as_slice()];
        }
        if let Some(dir) = cache::cache_dir() {
            cache::store(&dir, dim, extent, tol, &values)?;
        }
        Ok(GreenTable { dim, extent, tol, values })
    }

    /// Process-wide table covering at least `extent`, computed once and shared.
    pub fn shared(dim: usize, extent: u32, tol: f64) -> Result<Arc<GreenTable>> {
        static MEMO: OnceLock<Mutex<HashMap<(usize, u64), Arc<GreenTable>>>> = OnceLock::new();
        let memo = MEMO.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = memo.lock().unwrap_or_else(|p| p.into_inner());
        let key = (dim, tol.to_bits());
        if let Some(t) = guard.get(&key) {
            if t.extent >= extent {
                return Ok(t.clone());
            }
        }
        // Round up so that slowly growing requests do not recompute every time.
        let rounded = extent.max(4).div_ceil(4) * 4;
        let table = Arc::new(GreenTable::compute(dim, rounded, tol)?);
        guard.insert(key, table.clone());
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> u32 {
        self.extent
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// `g(0, x)`, or `None` when `x` lies outside the table.
    pub fn get(&self, x: &[i64]) -> Option<f64> {
        let side = self.extent as u64 + 1;
        let mut idx = 0u64;
        for &c in x {
            let a = c.unsigned_abs();
            if a > self.extent as u64 {
                return None;
            }
            idx = idx * side + a;
        }
        Some(self.values[idx as usize])
    }

    /// `g(x, y)` for two sites, failing outside the table.
    pub fn between(&self, x: &[i64], y: &[i64]) -> Result<f64> {
        let off: Vec<i64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        self.get(&off).ok_or(Error::OutsideGreenTable { offset: off, extent: self.extent })
    }
}

/// Expected number of visits to `x` by the walk started at the origin.
pub fn green_value(x: &Site, tol: f64) -> Result<f64> {
    let dim = x.dim();
    if dim < MIN_DIM {
        return Err(Error::invalid(format!("dimension must be at least {MIN_DIM}, got {dim}")));
    }
    let key = quadrature::canonical(x.coords());
    Ok(quadrature::green_values(dim, &[key], tol)?[0])
}

/// Largest coordinate span between two members of `set`.
pub(crate) fn span(set: &SiteSet) -> u32 {
    set.bounds().map_or(0, |(lo, hi)| lo.iter().zip(&hi).map(|(a, b)| (b - a) as u32).max().unwrap_or(0))
}

/// Dense Green matrix on a finite set.
#[derive(Debug, Clone)]
pub struct GreenMatrix {
    domain: Arc<SiteSet>,
    entries: DMatrix<f64>,
    tol: f64,
}

impl GreenMatrix {
    pub fn domain(&self) -> &Arc<SiteSet> {
        &self.domain
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }
}

fn check_dense(what: &'static str, size: usize) -> Result<()> {
    if size > MAX_DENSE_SITES {
        return Err(Error::TooLarge { what, size, cap: MAX_DENSE_SITES });
    }
    Ok(())
}

pub(crate) fn matrix_from_table(table: &GreenTable, set: &SiteSet) -> Result<DMatrix<f64>> {
    let n = set.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = table.between(set.get(i), set.get(j))?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Pairwise Green values on `set`.
pub fn green_matrix(set: Arc<SiteSet>, tol: f64) -> Result<GreenMatrix> {
    if set.is_empty() {
        return Err(Error::invalid("Green matrix of an empty set"));
    }
    check_dense("Green matrix", set.len())?;
    let table = GreenTable::shared(set.dim(), span(&set), tol)?;
    let entries = matrix_from_table(&table, &set)?;
    Ok(GreenMatrix { domain: set, entries, tol })
}

/// Cholesky factor plus a crude condition estimate from its diagonal.
pub(crate) fn factor(m: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let chol = Cholesky::new(m).ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let condition = (hi / lo).powi(2);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    Ok((chol, condition))
}

/// Equilibrium measure and capacity of a finite set.
///
/// The measure lives on the inner boundary, so the dense solve is restricted
/// to it; interior sites carry zero mass.
#[derive(Debug, Clone)]
pub struct EquilibriumData {
    domain: Arc<SiteSet>,
    measure: Vec<f64>,
    capacity: f64,
    boundary: Arc<SiteSet>,
    boundary_positions: Vec<usize>,
    green: GreenMatrix,
    factor: Cholesky<f64, Dyn>,
    condition: f64,
    table: Arc<GreenTable>,
}

impl EquilibriumData {
    pub fn domain(&self) -> &Arc<SiteSet> {
        &self.domain
    }

    /// Equilibrium mass per site of the domain.
    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    /// Inner boundary, the support of the measure.
    pub fn boundary(&self) -> &Arc<SiteSet> {
        &self.boundary
    }

    /// Positions in the domain of the inner boundary sites.
    pub fn boundary_positions(&self) -> &[usize] {
        &self.boundary_positions
    }

    /// Green matrix on the inner boundary.
    pub fn green(&self) -> &GreenMatrix {
        &self.green
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn table(&self) -> &Arc<GreenTable> {
        &self.table
    }

    /// Equilibrium potential `Σ_x g(y, x) e(x)`; the probability of ever
    /// hitting the set from `y`.
    pub fn potential(&self, y: &[i64]) -> Result<f64> {
        let table = self.table_reaching(y)?;
        let mut p = 0.0;
        for (k, &pos) in self.boundary_positions.iter().enumerate() {
            p += table.between(y, self.boundary.get(k))? * self.measure[pos];
        }
        Ok(p)
    }

    /// Hitting probabilities and unnormalised first-entrance laws over the
    /// inner boundary for many outside sites at once.
    pub(crate) fn entrance_laws(&self, ys: &[Vec<i64>]) -> Result<Vec<(f64, Vec<f64>)>> {
        if ys.is_empty() {
            return Ok(Vec::new());
        }
        let mut reach = 0;
        let (lo, hi) = self.boundary.bounds().expect("nonempty boundary");
        for y in ys {
            for k in 0..y.len() {
                reach = reach.max((y[k] - lo[k]).abs().max((hi[k] - y[k]).abs()) as u32);
            }
        }
        let table = if reach <= self.table.extent() {
            self.table.clone()
        } else {
            GreenTable::shared(self.domain.dim(), reach, self.table.tol())?
        };
        let b = &self.boundary;
        let mut rhs = DMatrix::<f64>::zeros(b.len(), ys.len());
        for (j, y) in ys.iter().enumerate() {
            for k in 0..b.len() {
                rhs[(k, j)] = table.between(b.get(k), y)?;
            }
        }
        let h = self.factor.solve(&rhs);
        let mut out = Vec::with_capacity(ys.len());
        for j in 0..ys.len() {
            let p: f64 = (0..b.len()).map(|k| rhs[(k, j)] * self.measure[self.boundary_positions[k]]).sum();
            if !(-HITTING_SLACK..=1.0 + HITTING_SLACK).contains(&p) {
                return Err(Error::HittingProbability { value: p });
            }
            let mut law = Vec::with_capacity(b.len());
            for k in 0..b.len() {
                let v = h[(k, j)];
                if v < -HITTING_SLACK {
                    return Err(Error::HittingProbability { value: v });
                }
                law.push(v.max(0.0));
            }
            out.push((p.clamp(0.0, 1.0), law));
        }
        Ok(out)
    }

    fn table_reaching(&self, y: &[i64]) -> Result<Arc<GreenTable>> {
        let (lo, hi) = self.boundary.bounds().expect("nonempty boundary");
        let reach = (0..y.len()).map(|k| (y[k] - lo[k]).abs().max((hi[k] - y[k]).abs()) as u32).max().unwrap_or(0);
        if reach <= self.table.extent() {
            Ok(self.table.clone())
        } else {
            GreenTable::shared(self.domain.dim(), reach, self.table.tol())
        }
    }
}

/// Solve `G e = 1` on `set`.
pub fn equilibrium(set: Arc<SiteSet>, tol: f64) -> Result<EquilibriumData> {
    if set.is_empty() {
        return Err(Error::invalid("equilibrium measure of an empty set"));
    }
    let boundary_positions = set.inner_boundary();
    check_dense("equilibrium boundary", boundary_positions.len())?;
    let boundary = Arc::new(SiteSet::new(set.dim(), boundary_positions.iter().map(|&i| set.site(i)))?);
    // SiteSet re-sorts; positions are already lexicographic so the order agrees.
    debug_assert!(boundary_positions.iter().enumerate().all(|(k, &i)| boundary.get(k) == set.get(i)));
    let table = GreenTable::shared(set.dim(), span(&set), tol)?;
    let entries = matrix_from_table(&table, &boundary)?;
    let green = GreenMatrix { domain: boundary.clone(), entries: entries.clone(), tol };
    let (chol, condition) = factor(entries)?;
    let e = chol.solve(&DVector::from_element(boundary.len(), 1.0));
    let mut measure = vec![0.0; set.len()];
    for (k, &pos) in boundary_positions.iter().enumerate() {
        let v = e[k];
        if v < -NEGATIVE_SLACK {
            return Err(Error::NegativeEquilibrium { site: boundary.get(k).to_vec(), value: v });
        }
        measure[pos] = v.max(0.0);
    }
    let capacity = measure.iter().sum();
    Ok(EquilibriumData {
        domain: set,
        measure,
        capacity,
        boundary,
        boundary_positions,
        green,
        factor: chol,
        condition,
        table,
    })
}

/// Hitting probability of a set and the law of the first entrance site.
#[derive(Debug, Clone)]
pub struct Hitting {
    pub probability: f64,
    /// Conditional law of the entrance site, indexed like the set's domain.
    pub entry: Vec<f64>,
}

/// Probability that the walk from `y` ever hits the set, and where it enters.
///
/// The entrance law solves `g(z, y) = Σ_x H(y, x) g(x, z)` for `z` on the inner
/// boundary (first-entrance decomposition).
pub fn hitting_probability(y: &Site, eq: &EquilibriumData) -> Result<Hitting> {
    let dom = eq.domain();
    if y.dim() != dom.dim() {
        return Err(Error::DimensionMismatch { expected: dom.dim(), found: y.dim() });
    }
    let mut entry = vec![0.0; dom.len()];
    if let Some(p) = dom.position(y.coords()) {
        entry[p] = 1.0;
        return Ok(Hitting { probability: 1.0, entry });
    }
    let table = eq.table_reaching(y.coords())?;
    let b = eq.boundary();
    let rhs = DVector::from_iterator(
        b.len(),
        (0..b.len()).map(|k| table.between(b.get(k), y.coords())).collect::<Result<Vec<_>>>()?,
    );
    let h = eq.factor.solve(&rhs);
    let p: f64 = (0..b.len()).map(|k| rhs[k] * eq.measure[eq.boundary_positions[k]]).sum();
    if !(-HITTING_SLACK..=1.0 + HITTING_SLACK).contains(&p) {
        return Err(Error::HittingProbability { value: p });
    }
    let total: f64 = h.iter().sum();
    for (k, &pos) in eq.boundary_positions().iter().enumerate() {
        let v = h[k];
        if v < -HITTING_SLACK {
            return Err(Error::HittingProbability { value: v });
        }
        entry[pos] = v.max(0.0) / total;
    }
    Ok(Hitting { probability: p.clamp(0.0, 1.0), entry })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_entry_count() {
        // Multisets of size 3 from {0..=2}.
        assert_eq!(canonical_entries(3, 2).len(), 10);
    }

    #[test]
    fn table_symmetry_and_lookup() {
        let t = GreenTable::compute(3, 2, 1e-11).unwrap();
        assert_eq!(t.get(&[1, -2, 0]), t.get(&[0, 2, -1]));
        assert!(t.get(&[3, 0, 0]).is_none());
        assert!(t.between(&[5, 0, 0], &[0, 0, 0]).is_err());
    }
}
