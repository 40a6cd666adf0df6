//! Exact sampler for the forward trajectories of interlacements that hit a
//! finite window.
//!
//! A trajectory starts at a site drawn from the normalised equilibrium measure
//! of the window and performs the simple random walk. Only window sites
//! accumulate (unit-rate exponential) holding times. When the walk leaves the
//! escape ball around the window it returns with the exact hitting
//! probability and re-enters at a site drawn from the first-entrance law, or
//! is terminated for good. The escape radius affects speed only.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};

use crate::error::{Error, Result};
use crate::green::{equilibrium, EquilibriumData};
use crate::lattice::{Site, SiteSet};

use super::Trajectory;

/// Lattice units added to the window circumradius to obtain the escape radius.
pub const DEFAULT_ESCAPE_MARGIN: f64 = 10.0;
pub const DEFAULT_STEP_BUDGET: u64 = 1 << 32;

const INSIDE: i32 = -1;
const UNREACHABLE: i32 = i32::MIN;

/// Draw from a cumulative table by bisection.
fn draw(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total = *cdf.last().expect("nonempty cdf");
    let x = rng.random::<f64>() * total;
    cdf.partition_point(|&c| c <= x).min(cdf.len() - 1)
}

fn cumulative(weights: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .into_iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

pub(crate) fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> Result<u64> {
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::invalid(format!("Poisson mean {mean}: {e}")))?;
    Ok(dist.sample(rng) as u64)
}

#[derive(Debug)]
pub struct WindowSampler {
    window: Arc<SiteSet>,
    eq: EquilibriumData,
    escape_radius: f64,
    dim: usize,
    strides: Vec<usize>,
    code: Vec<i32>,
    window_cell: Vec<usize>,
    /// Window positions of the inner boundary, the support of entrance laws.
    boundary_index: Vec<u32>,
    start_cdf: Vec<f64>,
    shell_return: Vec<f64>,
    shell_cdf: Vec<f64>,
    step_budget: u64,
}

impl WindowSampler {
    pub fn new(window: Arc<SiteSet>, tol: f64) -> Result<Self> {
        WindowSampler::with_options(window, tol, DEFAULT_ESCAPE_MARGIN, DEFAULT_STEP_BUDGET)
    }

    pub fn with_options(window: Arc<SiteSet>, tol: f64, escape_margin: f64, step_budget: u64) -> Result<Self> {
        if window.is_empty() {
            return Err(Error::invalid("cannot sample on an empty window"));
        }
        if !(escape_margin >= 1.0) {
            return Err(Error::invalid(format!("escape margin must be at least 1, got {escape_margin}")));
        }
        let eq = equilibrium(window.clone(), tol)?;
        let dim = window.dim();
        let center = window.center().expect("nonempty window").0;
        let escape_radius = window.radius_about(&center) + escape_margin;
        let r = escape_radius.floor() as i64 + 1;
        let side = (2 * r + 3) as usize;
        let lo: Vec<i64> = center.iter().map(|c| c - r - 1).collect();
        let mut strides = vec![1usize; dim];
        for k in (0..dim - 1).rev() {
            strides[k] = strides[k + 1] * side;
        }
        let cells = side.pow(dim as u32);
        let mut code = vec![UNREACHABLE; cells];
        let mut coords = vec![0i64; dim];
        let decode = |cell: usize, coords: &mut [i64]| {
            let mut rem = cell;
            for k in 0..dim {
                coords[k] = lo[k] + (rem / strides[k]) as i64;
                rem %= strides[k];
            }
        };
        let r2 = escape_radius * escape_radius;
        let dist2 = |c: &[i64]| c.iter().zip(&center).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
        let mut window_cell = vec![0usize; window.len()];
        for cell in 0..cells {
            decode(cell, &mut coords);
            if dist2(&coords) <= r2 {
                code[cell] = match window.position(&coords) {
                    Some(i) => {
                        window_cell[i] = cell;
                        i as i32
                    }
                    None => INSIDE,
                };
            }
        }
        // Shell: sites outside the ball adjacent to it.
        let mut shell_sites: Vec<Vec<i64>> = Vec::new();
        for cell in 0..cells {
            if code[cell] != INSIDE && code[cell] < 0 {
                continue;
            }
            for k in 0..dim {
                for nb in [cell - strides[k], cell + strides[k]] {
                    if code[nb] == UNREACHABLE {
                        code[nb] = -2 - shell_sites.len() as i32;
                        decode(nb, &mut coords);
                        shell_sites.push(coords.clone());
                    }
                }
            }
        }
        let laws = eq.entrance_laws(&shell_sites)?;
        let boundary_index: Vec<u32> = eq.boundary_positions().iter().map(|&p| p as u32).collect();
        let mut shell_return = Vec::with_capacity(laws.len());
        let mut shell_cdf = Vec::with_capacity(laws.len() * boundary_index.len());
        for (p, law) in laws {
            shell_return.push(p);
            shell_cdf.extend(cumulative(law));
        }
        let start_cdf = cumulative(eq.boundary_positions().iter().map(|&p| eq.measure()[p]));
        Ok(WindowSampler {
            window,
            eq,
            escape_radius,
            dim,
            strides,
            code,
            window_cell,
            boundary_index,
            start_cdf,
            shell_return,
            shell_cdf,
            step_budget,
        })
    }

    pub fn window(&self) -> &Arc<SiteSet> {
        &self.window
    }

    pub fn equilibrium(&self) -> &EquilibriumData {
        &self.eq
    }

    pub fn capacity(&self) -> f64 {
        self.eq.capacity()
    }

    pub fn escape_radius(&self) -> f64 {
        self.escape_radius
    }

    pub(crate) fn draw_start(&self, rng: &mut ChaCha8Rng) -> usize {
        self.boundary_index[draw(&self.start_cdf, rng)] as usize
    }

    /// Run one forward trajectory from window position `start`, adding its
    /// holding times to `occ`. Returns whether it visited a marked site.
    pub(crate) fn run(
        &self,
        start: usize,
        rng: &mut ChaCha8Rng,
        occ: &mut [f64],
        marked: Option<&[bool]>,
        mut record: Option<&mut Trajectory>,
    ) -> Result<bool> {
        let nb = self.boundary_index.len();
        let deg = 2 * self.dim as u32;
        let mut cell = self.window_cell[start];
        let mut hit = false;
        let mut steps = 0u64;
        loop {
            let c = self.code[cell];
            if c >= 0 {
                let i = c as usize;
                let t: f64 = Exp1.sample(rng);
                occ[i] += t;
                if let Some(m) = marked {
                    hit |= m[i];
                }
                if let Some(tr) = record.as_deref_mut() {
                    tr.steps.push(Site(self.window.get(i).to_vec()));
                    tr.holding_times.push(t);
                }
            } else if c != INSIDE {
                let k = (-2 - c) as usize;
                if rng.random::<f64>() >= self.shell_return[k] {
                    if let Some(tr) = record.as_deref_mut() {
                        tr.terminated = true;
                    }
                    return Ok(hit);
                }
                let entry = self.boundary_index[draw(&self.shell_cdf[k * nb..(k + 1) * nb], rng)] as usize;
                if let Some(tr) = record.as_deref_mut() {
                    tr.reentries += 1;
                }
                cell = self.window_cell[entry];
                continue;
            }
            steps += 1;
            if steps > self.step_budget {
                return Err(Error::StepBudget { budget: self.step_budget, escape_radius: self.escape_radius });
            }
            let dir = rng.random_range(0..deg) as usize;
            let stride = self.strides[dir / 2];
            cell = if dir.is_multiple_of(2) { cell - stride } else { cell + stride };
        }
    }

    /// A recorded trajectory started at `entry` (which must be a window site).
    pub fn sample_trajectory(&self, entry: &Site, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
        let start = self
            .window
            .position(entry.coords())
            .ok_or_else(|| Error::invalid(format!("entry {entry:?} is not a window site")))?;
        let mut tr = Trajectory { entry: entry.clone(), ..Trajectory::default() };
        let mut occ = vec![0.0; self.window.len()];
        self.run(start, rng, &mut occ, None, Some(&mut tr))?;
        Ok(tr)
    }

    /// Add the occupation of a level-`u` interlacement to `occ`; returns the
    /// number of trajectories and how many of them visited a marked site.
    pub(crate) fn accumulate(
        &self,
        u: f64,
        rng: &mut ChaCha8Rng,
        occ: &mut [f64],
        marked: Option<&[bool]>,
    ) -> Result<(u64, u64)> {
        let eta = poisson(u * self.capacity(), rng)?;
        let mut hits = 0;
        for _ in 0..eta {
            let start = self.draw_start(rng);
            hits += self.run(start, rng, occ, marked, None)? as u64;
        }
        Ok((eta, hits))
    }
}
