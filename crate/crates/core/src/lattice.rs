//! Lattice geometry on Z^d, windows of the scaled lattice (1/N)Z^d and the
//! discrete Dirichlet form.
//!
//! Sites are always stored in unscaled integer coordinates `x`; the scaled
//! point is `y = x / N`. Fields therefore carry no scale of their own and the
//! scale enters only through the prefactors of [`dirichlet_energy_n`] and
//! [`inner_product_n`].

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_DIM: usize = 3;

/// A point of Z^d.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site(pub Vec<i64>);

impl Site {
    pub fn new(coords: Vec<i64>) -> Self {
        Site(coords)
    }

    pub fn origin(dim: usize) -> Self {
        Site(vec![0; dim])
    }

    /// The unit vector along `axis`, scaled by `sign`.
    pub fn unit(dim: usize, axis: usize, sign: i64) -> Self {
        let mut c = vec![0; dim];
        c[axis] = sign;
        Site(c)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn offset(&self, other: &Site) -> Site {
        Site(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn neg(&self) -> Site {
        Site(self.0.iter().map(|a| -a).collect())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Scaled position `x / N` in continuum coordinates.
    pub fn scaled(&self, n: u32) -> Vec<f64> {
        self.0.iter().map(|&c| c as f64 / n as f64).collect()
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

pub(crate) fn norm(c: &[i64]) -> f64 {
    c.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Visit the `2d` nearest neighbours of `x`, reusing one buffer.
pub(crate) fn for_each_neighbor(x: &[i64], mut f: impl FnMut(&[i64])) {
    let mut buf = x.to_vec();
    for axis in 0..x.len() {
        for sign in [-1i64, 1] {
            buf[axis] = x[axis] + sign;
            f(&buf);
        }
        buf[axis] = x[axis];
    }
}

/// A finite set of sites in lexicographic order with a total position lookup.
#[derive(Clone)]
pub struct SiteSet {
    dim: usize,
    coords: Vec<i64>,
    index: HashMap<Box<[i64]>, usize>,
}

impl SiteSet {
    /// Build a set from arbitrary sites; duplicates collapse and order becomes
    /// lexicographic.
    pub fn new(dim: usize, sites: impl IntoIterator<Item = Site>) -> Result<Self> {
        if dim < MIN_DIM {
            return Err(Error::invalid(format!("dimension must be at least {MIN_DIM}, got {dim}")));
        }
        let mut list: Vec<Site> = Vec::new();
        for s in sites {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: s.dim() });
            }
            list.push(s);
        }
        list.sort_unstable();
        list.dedup();
        let mut coords = Vec::with_capacity(list.len() * dim);
        let mut index = HashMap::with_capacity(list.len());
        for (i, s) in list.into_iter().enumerate() {
            coords.extend_from_slice(&s.0);
            index.insert(s.0.into_boxed_slice(), i);
        }
        Ok(SiteSet { dim, coords, index })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        SiteSet::new(dim, std::iter::empty())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, i: usize) -> &[i64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn site(&self, i: usize) -> Site {
        Site(self.get(i).to_vec())
    }

    pub fn position(&self, x: &[i64]) -> Option<usize> {
        self.index.get(x).copied()
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        self.index.contains_key(x)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[i64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Positions of sites having at least one neighbour outside the set.
    pub fn inner_boundary(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| {
                let mut outside = false;
                for_each_neighbor(self.get(i), |y| outside |= !self.contains(y));
                outside
            })
            .collect()
    }

    /// Componentwise min and max coordinates; `None` for an empty set.
    pub fn bounds(&self) -> Option<(Vec<i64>, Vec<i64>)> {
        let mut it = self.iter();
        let first = it.next()?;
        let (mut lo, mut hi) = (first.to_vec(), first.to_vec());
        for x in it {
            for k in 0..self.dim {
                lo[k] = lo[k].min(x[k]);
                hi[k] = hi[k].max(x[k]);
            }
        }
        Some((lo, hi))
    }

    /// Lattice point nearest to the centre of the bounding box.
    pub fn center(&self) -> Option<Site> {
        let (lo, hi) = self.bounds()?;
        Some(Site(lo.iter().zip(&hi).map(|(a, b)| (a + b).div_euclid(2)).collect()))
    }

    /// Largest Euclidean distance from `center` to a member.
    pub fn radius_about(&self, center: &[i64]) -> f64 {
        self.iter()
            .map(|x| x.iter().zip(center).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn is_subset_of(&self, other: &SiteSet) -> bool {
        self.iter().all(|x| other.contains(x))
    }
}

impl fmt::Debug for SiteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SiteSet").field("dim", &self.dim).field("len", &self.len()).finish()
    }
}

impl PartialEq for SiteSet {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.coords == other.coords
    }
}

/// Closed box `Π [lo_i, hi_i]` in continuum coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct ClosedBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<RawBox> for ClosedBox {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        ClosedBox::new(raw.lo, raw.hi)
    }
}

impl ClosedBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), found: hi.len() });
        }
        for (i, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::invalid(format!("degenerate box side {i}: [{a}, {b}]")));
            }
        }
        Ok(ClosedBox { lo, hi })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        ClosedBox::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    /// Smallest gap between the faces of `self` and the faces of the enclosing
    /// box `outer`; negative when `self` is not inside `outer`.
    pub fn face_gap_within(&self, outer: &ClosedBox) -> f64 {
        let mut gap = f64::INFINITY;
        for i in 0..self.dim() {
            gap = gap.min(self.lo[i] - outer.lo[i]).min(outer.hi[i] - self.hi[i]);
        }
        gap
    }
}

/// Integer sites `x` with `x / N` in the box, in lexicographic order.
pub fn build_window(bx: &ClosedBox, n: u32) -> Result<SiteSet> {
    if n == 0 {
        return Err(Error::invalid("scale N must be at least 1"));
    }
    let dim = bx.dim();
    let nf = n as f64;
    let mut ranges = Vec::with_capacity(dim);
    for i in 0..dim {
        // Bracket generously, then filter with the exact membership test.
        let lo = (bx.lo[i] * nf).floor() as i64 - 1;
        let hi = (bx.hi[i] * nf).ceil() as i64 + 1;
        let admitted: Vec<i64> = (lo..=hi)
            .filter(|&x| {
                let y = x as f64 / nf;
                bx.lo[i] <= y && y <= bx.hi[i]
            })
            .collect();
        ranges.push(admitted);
    }
    let mut sites = Vec::new();
    if ranges.iter().all(|r| !r.is_empty()) {
        let mut idx = vec![0usize; dim];
        loop {
            sites.push(Site((0..dim).map(|k| ranges[k][idx[k]]).collect()));
            let mut k = dim;
            loop {
                if k == 0 {
                    return SiteSet::new(dim, sites);
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < ranges[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
    SiteSet::new(dim, sites)
}

/// Finite real assignment on a site set; implicitly zero off the domain.
#[derive(Clone, Debug)]
pub struct LatticeField {
    domain: Arc<SiteSet>,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn new(domain: Arc<SiteSet>, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::invalid(format!(
                "field has {} values for a domain of {} sites",
                values.len(),
                domain.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite field value {v}")));
        }
        Ok(LatticeField { domain, values })
    }

    pub fn constant(domain: Arc<SiteSet>, c: f64) -> Result<Self> {
        let n = domain.len();
        LatticeField::new(domain, vec![c; n])
    }

    pub fn from_fn(domain: Arc<SiteSet>, mut f: impl FnMut(&[i64]) -> f64) -> Result<Self> {
        let values = domain.iter().map(&mut f).collect();
        LatticeField::new(domain, values)
    }

    pub fn domain(&self) -> &Arc<SiteSet> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Value at an arbitrary site (zero off the domain).
    pub fn at(&self, x: &[i64]) -> f64 {
        self.domain.position(x).map_or(0.0, |i| self.values[i])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        LatticeField::new(self.domain.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Sites where the field is non-zero.
    pub fn support(&self) -> Result<SiteSet> {
        SiteSet::new(
            self.dim(),
            self.domain.iter().zip(&self.values).filter(|(_, v)| **v != 0.0).map(|(x, _)| Site(x.to_vec())),
        )
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Edge and vertex weights of the walk: `c = 1/(2d)` per neighbour pair and
/// `λ_x = 1`, so the continuous-time walk jumps at rate one to a uniform
/// neighbour and green entries count expected visits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightConvention {
    dim: usize,
}

impl WeightConvention {
    pub fn standard(dim: usize) -> Self {
        WeightConvention { dim }
    }

    pub fn edge_weight(&self) -> f64 {
        1.0 / (2.0 * self.dim as f64)
    }

    pub fn vertex_weight(&self) -> f64 {
        1.0
    }
}

/// Sum over unordered nearest-neighbour pairs of squared increments, for a
/// field extended by zero.
pub(crate) fn gradient_square_sum(phi: &LatticeField) -> f64 {
    let dom = phi.domain();
    let mut total = 0.0;
    for (i, x) in dom.iter().enumerate() {
        let v = phi.values[i];
        for_each_neighbor(x, |y| match dom.position(y) {
            // inside pairs are seen from both ends
            Some(j) => total += 0.5 * (phi.values[j] - v).powi(2),
            None => total += v * v,
        });
    }
    total
}

/// Dirichlet form on the scaled lattice:
/// `(1 / (2 N^{d-2})) Σ_{unordered y~y'} (φ(y') - φ(y))²`.
pub fn dirichlet_energy_n(phi: &LatticeField, n: u32) -> f64 {
    let d = phi.dim() as i32;
    gradient_square_sum(phi) / (2.0 * (n as f64).powi(d - 2))
}

/// `⟨f, h⟩ = N^{-d} Σ f(y) h(y)` over the common support.
pub fn inner_product_n(f: &LatticeField, h: &LatticeField, n: u32) -> f64 {
    let d = f.dim() as i32;
    let (small, large) = if f.domain().len() <= h.domain().len() { (f, h) } else { (h, f) };
    let sum: f64 = small.domain().iter().zip(small.values()).map(|(x, v)| v * large.at(x)).sum();
    sum / (n as f64).powi(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(lo: f64, hi: f64) -> ClosedBox {
        ClosedBox::cube(3, lo, hi).unwrap()
    }

    #[test]
    fn window_examples() {
        let w = build_window(&cube(0.0, 1.0), 1).unwrap();
        assert_eq!(w.len(), 8);
        assert!(w.contains(&[1, 1, 1]) && w.contains(&[0, 0, 0]));
        assert_eq!(build_window(&cube(0.0, 1.0), 2).unwrap().len(), 27);
        let o = build_window(&cube(-0.4, 0.4), 1).unwrap();
        assert_eq!(o.len(), 1);
        assert!(o.contains(&[0, 0, 0]));
        assert!(build_window(&cube(0.2, 0.4), 1).unwrap().is_empty());
    }

    #[test]
    fn window_order_is_lexicographic() {
        let w = build_window(&cube(-1.0, 1.0), 1).unwrap();
        let v: Vec<Vec<i64>> = w.iter().map(|x| x.to_vec()).collect();
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(v, sorted);
        for (i, x) in w.iter().enumerate() {
            assert_eq!(w.position(x), Some(i));
        }
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(ClosedBox::new(vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]).is_err());
        assert!(build_window(&cube(0.0, 1.0), 0).is_err());
    }

    #[test]
    fn low_dimension_rejected() {
        assert!(SiteSet::new(2, vec![Site(vec![0, 0])]).is_err());
    }

    #[test]
    fn energy_of_point_indicator() {
        let dom = Arc::new(SiteSet::new(3, vec![Site::origin(3)]).unwrap());
        let phi = LatticeField::constant(dom.clone(), 1.0).unwrap();
        assert_eq!(dirichlet_energy_n(&phi, 1), 3.0);
        let zero = LatticeField::constant(dom, 0.0).unwrap();
        assert_eq!(dirichlet_energy_n(&zero, 1), 0.0);
    }

    #[test]
    fn interior_sites_have_2d_neighbours() {
        let w = build_window(&cube(0.0, 1.0), 4).unwrap();
        let boundary = w.inner_boundary();
        assert_eq!(w.len() - boundary.len(), 27);
        for i in 0..w.len() {
            if boundary.contains(&i) {
                continue;
            }
            let mut count = 0;
            for_each_neighbor(w.get(i), |y| count += w.contains(y) as usize);
            assert_eq!(count, 6);
        }
    }

    #[test]
    fn inner_products() {
        let one = Arc::new(SiteSet::new(3, vec![Site::origin(3)]).unwrap());
        let f = LatticeField::constant(one.clone(), 1.0).unwrap();
        assert_eq!(inner_product_n(&f, &f, 2), 0.125);

        let w = Arc::new(build_window(&cube(0.0, 1.0), 2).unwrap());
        let g = LatticeField::constant(w.clone(), 1.0).unwrap();
        assert_eq!(inner_product_n(&g, &g, 2), 27.0 / 8.0);

        let other = Arc::new(SiteSet::new(3, vec![Site(vec![9, 9, 9])]).unwrap());
        let h = LatticeField::constant(other, 1.0).unwrap();
        assert_eq!(inner_product_n(&g, &h, 2), 0.0);
    }

    #[test]
    fn weights_standard() {
        let w = WeightConvention::standard(3);
        assert_eq!(w.edge_weight() * 6.0, w.vertex_weight());
    }
}
