//! Mollified profiles on a regular grid and grid disconnection detection.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::geometry::Region;
use crate::lattice::ClosedBox;
use crate::sim::AtomicMeasure;

/// Cone bump `C (1 − |y|/δ)_+`, normalised to a probability density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    dim: usize,
    delta: f64,
    norm: f64,
}

impl Mollifier {
    pub fn new(dim: usize, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) || dim == 0 {
            return Err(Error::invalid(format!("mollifier radius must be positive, got {delta}")));
        }
        // ∫ (1 − r/δ)_+ dy = S_{d−1} δ^d / (d (d+1)), S_{d−1} = 2 π^{d/2} / Γ(d/2).
        let d = dim as f64;
        let sphere = 2.0 * std::f64::consts::PI.powf(d / 2.0) / gamma(d / 2.0);
        let norm = d * (d + 1.0) / (sphere * delta.powi(dim as i32));
        Ok(Mollifier { dim, delta, norm })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Density at distance `r` from the centre.
    pub fn radial(&self, r: f64) -> f64 {
        if r >= self.delta {
            0.0
        } else {
            self.norm * (1.0 - r / self.delta)
        }
    }

    pub fn at(&self, y: &[f64]) -> f64 {
        self.radial(y.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

/// Values on the nodes `lo + i ⊙ step`, `0 <= i_k < counts_k`, of a box.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    lo: Vec<f64>,
    step: Vec<f64>,
    counts: Vec<usize>,
    values: Vec<f64>,
}

impl GridField {
    /// Zero field on a grid covering `bx` with spacing at most `spacing`;
    /// nodes include both faces of the box.
    pub fn over(bx: &ClosedBox, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::invalid(format!("grid spacing must be positive, got {spacing}")));
        }
        let mut step = Vec::new();
        let mut counts = Vec::new();
        for (l, h) in bx.lo().iter().zip(bx.hi()) {
            let cells = ((h - l) / spacing - 1e-9).ceil().max(1.0) as usize;
            step.push((h - l) / cells as f64);
            counts.push(cells + 1);
        }
        let total = counts.iter().product::<usize>();
        if total > 50_000_000 {
            return Err(Error::TooLarge { what: "evaluation grid", size: total, cap: 50_000_000 });
        }
        Ok(GridField { lo: bx.lo().to_vec(), step, counts, values: vec![0.0; total] })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn step(&self) -> &[f64] {
        &self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn index_of(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.counts).fold(0, |acc, (&i, &c)| acc * c + i)
    }

    fn multi_of(&self, mut index: usize, out: &mut [usize]) {
        for k in (0..self.dim()).rev() {
            out[k] = index % self.counts[k];
            index /= self.counts[k];
        }
    }

    pub fn node(&self, index: usize) -> Vec<f64> {
        let mut m = vec![0; self.dim()];
        self.multi_of(index, &mut m);
        m.iter().zip(&self.lo).zip(&self.step).map(|((&i, l), s)| l + i as f64 * s).collect()
    }

    /// Same grid, values replaced by `f(node)`.
    pub fn from_fn(&self, f: impl Fn(&[f64]) -> f64) -> GridField {
        let values = (0..self.len()).map(|i| f(&self.node(i))).collect();
        GridField { values, ..self.clone() }
    }
}

/// `z ↦ Σ_atoms mass · φ_δ(z − y)` on the nodes of `grid` (values replaced).
pub fn mollify(mu: &AtomicMeasure, m: &Mollifier, grid: &GridField) -> Result<GridField> {
    if mu.dim != grid.dim() || m.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), found: mu.dim });
    }
    let dim = grid.dim();
    let mut out = GridField { values: vec![0.0; grid.len()], ..grid.clone() };
    let delta = m.delta();
    let mut lo_idx = vec![0usize; dim];
    let mut hi_idx = vec![0usize; dim];
    let mut cur = vec![0usize; dim];
    for (i, &mass) in mu.masses.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let y = mu.position(i);
        let mut empty = false;
        for k in 0..dim {
            let a = ((y[k] - delta - grid.lo[k]) / grid.step[k]).ceil();
            let b = ((y[k] + delta - grid.lo[k]) / grid.step[k]).floor();
            let last = (grid.counts[k] - 1) as f64;
            let (a, b) = (a.max(0.0), b.min(last));
            if a > b {
                empty = true;
                break;
            }
            lo_idx[k] = a as usize;
            hi_idx[k] = b as usize;
        }
        if empty {
            continue;
        }
        cur.copy_from_slice(&lo_idx);
        loop {
            let mut r2 = 0.0;
            for k in 0..dim {
                let z = grid.lo[k] + cur[k] as f64 * grid.step[k];
                r2 += (z - y[k]).powi(2);
            }
            let w = m.radial(r2.sqrt());
            if w > 0.0 {
                let idx = out.index_of(&cur);
                out.values[idx] += mass * w;
            }
            if !advance(&mut cur, &lo_idx, &hi_idx) {
                break;
            }
        }
    }
    Ok(out)
}

/// Odometer step over the index box `lo..=hi`; false once exhausted.
fn advance(cur: &mut [usize], lo: &[usize], hi: &[usize]) -> bool {
    for k in (0..cur.len()).rev() {
        if cur[k] < hi[k] {
            cur[k] += 1;
            return true;
        }
        cur[k] = lo[k];
    }
    false
}

/// Whether the level set `{f ≥ a}` separates `k` from the grid boundary.
///
/// Breadth-first search over face-adjacent nodes with `f < a` (or `f > a`
/// when `flipped`, for sub-level disconnection), seeded at every open node on
/// the boundary of the grid box. Returns true iff no open node inside `k` is
/// reached. Face adjacency only approximates continuum path connectivity, so
/// near-threshold fields can be misclassified either way.
pub fn disconnects(field: &GridField, a: f64, k: &Region, flipped: bool) -> Result<bool> {
    let dim = field.dim();
    if k.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: k.dim() });
    }
    let (klo, khi) = k.bounding_box();
    let hmax = field.step.iter().copied().fold(0.0, f64::max);
    for j in 0..dim {
        let top = field.lo[j] + (field.counts[j] - 1) as f64 * field.step[j];
        let gap = (klo[j] - field.lo[j]).min(top - khi[j]);
        if gap < 2.0 * hmax {
            return Err(Error::UnresolvedGeometry(format!(
                "obstacle is {gap:.4} from the grid boundary along axis {j}; need at least two cells ({:.4})",
                2.0 * hmax
            )));
        }
    }
    let inside: Vec<bool> = (0..field.len()).map(|i| k.contains(&field.node(i))).collect();
    if !inside.iter().any(|&b| b) {
        return Err(Error::UnresolvedGeometry("no grid node lies inside the obstacle".into()));
    }
    let open = |v: f64| if flipped { v > a } else { v < a };
    let mut seen = vec![false; field.len()];
    let mut queue = VecDeque::new();
    let mut multi = vec![0usize; dim];
    for i in 0..field.len() {
        field.multi_of(i, &mut multi);
        let on_boundary = multi.iter().zip(&field.counts).any(|(&m, &c)| m == 0 || m + 1 == c);
        if on_boundary && open(field.values[i]) {
            seen[i] = true;
            queue.push_back(i);
        }
    }
    let mut stride = vec![1usize; dim];
    for j in (0..dim.saturating_sub(1)).rev() {
        stride[j] = stride[j + 1] * field.counts[j + 1];
    }
    while let Some(i) = queue.pop_front() {
        if inside[i] {
            return Ok(false);
        }
        field.multi_of(i, &mut multi);
        for j in 0..dim {
            if multi[j] > 0 {
                let nb = i - stride[j];
                if !seen[nb] && open(field.values[nb]) {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
            if multi[j] + 1 < field.counts[j] {
                let nb = i + stride[j];
                if !seen[nb] && open(field.values[nb]) {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
    }
    Ok(true)
}

/// Disconnection verdict at spacing `η` plus agreement with spacing `η/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub disconnects: bool,
    pub refined_agrees: bool,
}

pub fn disconnection_verdict(
    mu: &AtomicMeasure,
    m: &Mollifier,
    b0: &ClosedBox,
    spacing: f64,
    a: f64,
    k: &Region,
    flipped: bool,
) -> Result<Verdict> {
    let coarse = mollify(mu, m, &GridField::over(b0, spacing)?)?;
    let fine = mollify(mu, m, &GridField::over(b0, spacing / 2.0)?)?;
    let d = disconnects(&coarse, a, k, flipped)?;
    let f = disconnects(&fine, a, k, flipped)?;
    Ok(Verdict { disconnects: d, refined_agrees: d == f })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_box_faces() {
        let g = GridField::over(&ClosedBox::cube(2, -1.0, 1.0).unwrap(), 0.3).unwrap();
        assert_eq!(g.counts(), &[8, 8]);
        assert_eq!(g.node(0), vec![-1.0, -1.0]);
        let last = g.node(g.len() - 1);
        assert!((last[0] - 1.0).abs() < 1e-12 && (last[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cone_normalisation_in_three_dimensions() {
        let m = Mollifier::new(3, 0.5).unwrap();
        assert!((m.radial(0.0) - 3.0 / (std::f64::consts::PI * 0.125)).abs() < 1e-12);
        assert_eq!(m.radial(0.5), 0.0);
    }
}
