//! Applications to profile deviations: mollified profiles and insulation
//! (disconnection) events, insulation rate bounds, the entropy gap of the
//! tilting strategy, and the subadditivity experiment.

mod field;
mod subadditive;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use field::{disconnection_verdict, disconnects, mollify, GridField, Mollifier, Verdict};
pub use subadditive::{
    subadditivity_scan, PairCheck, ProfileEvent, SubadditivityRow, SubadditivityTable, TestFunction,
};

use crate::error::{Error, Result};
use crate::geometry::Region;
use crate::lattice::{build_window, ClosedBox};
use crate::sim::{profile, run_batches, sample_occupation, TiltedSampler, WindowSampler};
use crate::stats::{wilson, Proportion};
use crate::variational::{capacity_scaled, SolveOptions};

/// Obstacle `K ⊂ B_0 ⊂ B`, mollifier radius `δ`, threshold `a`, level `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisconnectionSetup {
    pub k: Region,
    pub b0: ClosedBox,
    pub b: ClosedBox,
    pub delta: f64,
    pub a: f64,
    pub u: f64,
}

impl DisconnectionSetup {
    pub fn validate(&self) -> Result<()> {
        self.k.validate()?;
        let dim = self.k.dim();
        if self.b0.dim() != dim || self.b.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: self.b0.dim().max(self.b.dim()) });
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.a >= 0.0 && self.a.is_finite() && self.u > 0.0 && self.u.is_finite()) {
            return Err(Error::invalid(format!("need a >= 0 and u > 0, got a = {}, u = {}", self.a, self.u)));
        }
        let (lo, hi) = self.k.bounding_box();
        let inside = (0..dim).all(|j| lo[j] > self.b0.lo()[j] && hi[j] < self.b0.hi()[j]);
        if !inside {
            return Err(Error::invalid("K must lie in the interior of B_0"));
        }
        let gap = self.b0.face_gap_within(&self.b);
        if !(gap > self.delta) {
            return Err(Error::invalid(format!("B_0 must sit deeper than delta inside B (face gap {gap})")));
        }
        Ok(())
    }

    pub fn mollifier(&self) -> Result<Mollifier> {
        Mollifier::new(self.k.dim(), self.delta)
    }

    /// `K^δ`, the closed `δ`-neighbourhood of `K`.
    pub fn dilated_obstacle(&self) -> Region {
        self.k.dilate(self.delta)
    }

    /// Default grid spacing `δ / 4`.
    pub fn default_spacing(&self) -> f64 {
        self.delta / 4.0
    }
}

/// Exponential decay rates `r` with probability `≈ exp(−r N^{d−2})`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InsulationBounds {
    /// `(1/d)(√a − √u)² cap(K^δ)`, from the tilting lower bound.
    pub lower_rate: f64,
    /// `(1/d)(√a − √u)² cap(K)`.
    pub upper_rate: f64,
    pub capacity_k: f64,
    pub capacity_k_delta: f64,
}

pub fn insulation_bounds(setup: &DisconnectionSetup, n: u32, opts: &SolveOptions) -> Result<InsulationBounds> {
    setup.validate()?;
    if !(setup.a > setup.u) {
        return Err(Error::invalid(format!("insulation needs a > u, got a = {}, u = {}", setup.a, setup.u)));
    }
    let dim = setup.k.dim() as f64;
    let factor = (setup.a.sqrt() - setup.u.sqrt()).powi(2) / dim;
    let capacity_k = capacity_scaled(&setup.k, n, opts)?.value;
    let capacity_k_delta = capacity_scaled(&setup.dilated_obstacle(), n, opts)?.value;
    Ok(InsulationBounds {
        lower_rate: factor * capacity_k_delta,
        upper_rate: factor * capacity_k,
        capacity_k,
        capacity_k_delta,
    })
}

/// `(v log(v/u) − v + u, (√v − √u)²)`: the cost of a Poisson tilt to
/// intensity `v` and the large-deviation cost of the same mean.
pub fn entropy_gap(v: f64, u: f64) -> Result<(f64, f64)> {
    if !(v > 0.0 && u > 0.0 && v.is_finite() && u.is_finite()) {
        return Err(Error::invalid(format!("entropy gap needs v, u > 0, got v = {v}, u = {u}")));
    }
    Ok((v * (v / u).ln() - v + u, (v.sqrt() - u.sqrt()).powi(2)))
}

/// Relative entropy of the tilted interlacement measure:
/// `((a+ε) log((a+ε)/u) − (a+ε) + u) cap`.
pub fn relative_entropy_tilted(a: f64, eps: f64, u: f64, cap_obstacle: f64) -> Result<f64> {
    let level = a + eps;
    if !(u > 0.0 && level >= u && level.is_finite() && cap_obstacle >= 0.0) {
        return Err(Error::invalid(format!("need a + eps >= u > 0 and cap >= 0, got a + eps = {level}, u = {u}")));
    }
    Ok(entropy_gap(level, u)?.0 * cap_obstacle)
}

/// Law of the occupation field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingMeasure {
    /// Interlacements at level `u`.
    Plain,
    /// Trajectories through `K^δ` at intensity `level`, the rest at `u`.
    Tilted { level: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyReport {
    pub n: u32,
    pub frequency: Proportion,
    /// Samples whose verdict changed at half the grid spacing.
    pub refinement_disagreements: u64,
    /// Lattice capacity of the tilted obstacle, when tilting.
    pub obstacle_capacity: Option<f64>,
    /// Sample mean of the log-likelihood ratio, when tilting.
    pub mean_log_ratio: Option<f64>,
}

/// Fraction of samples whose mollified profile disconnects `K` from `∂B_0`.
pub fn disconnection_frequency(
    setup: &DisconnectionSetup,
    n: u32,
    measure: SamplingMeasure,
    samples: u64,
    seed: u64,
    stream_base: u64,
    tol: f64,
) -> Result<FrequencyReport> {
    setup.validate()?;
    let window = Arc::new(build_window(&setup.b, n)?);
    let base = Arc::new(WindowSampler::new(window, tol)?);
    let tilted = match measure {
        SamplingMeasure::Plain => None,
        SamplingMeasure::Tilted { level } => {
            let obstacle = setup.dilated_obstacle().rasterize(n)?;
            if obstacle.is_empty() {
                return Err(Error::invalid(format!("K^delta has no lattice sites at N = {n}")));
            }
            Some(TiltedSampler::new(base.clone(), &obstacle, setup.u, level, tol)?)
        }
    };
    let mollifier = setup.mollifier()?;
    let spacing = setup.default_spacing();
    let batches = run_batches(samples, seed, stream_base, |count, rng| {
        let mut hits = 0u64;
        let mut disagreements = 0u64;
        let mut log_ratio = 0.0;
        for _ in 0..count {
            let occ = match &tilted {
                Some(t) => {
                    let s = t.sample(rng)?;
                    log_ratio += s.log_ratio;
                    s.occupation
                }
                None => sample_occupation(&base, setup.u, rng)?,
            };
            let rho = profile(&occ, n, &setup.b)?;
            let v = disconnection_verdict(&rho, &mollifier, &setup.b0, spacing, setup.a, &setup.k, false)?;
            hits += v.disconnects as u64;
            disagreements += !v.refined_agrees as u64;
        }
        Ok((hits, disagreements, log_ratio))
    })?;
    let (hits, disagreements, log_ratio) =
        batches.iter().fold((0, 0, 0.0), |(h, d, l), (bh, bd, bl)| (h + bh, d + bd, l + bl));
    Ok(FrequencyReport {
        n,
        frequency: wilson(hits, samples),
        refinement_disagreements: disagreements,
        obstacle_capacity: tilted.as_ref().map(|t| t.obstacle_capacity()),
        mean_log_ratio: tilted.as_ref().map(|_| log_ratio / samples as f64),
    })
}
