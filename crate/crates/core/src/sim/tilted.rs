//! Tilted interlacement: trajectories that visit an obstacle `K` come at
//! intensity `level` instead of `u`, all others stay at `u`.
//!
//! A sample is the superposition of a level-`u` window sample and an
//! independent Poisson((level − u) cap(W)) batch of window trajectories
//! thinned to those visiting `K`. Thinning a window batch, rather than
//! starting extra walks on `K`, keeps the window occupation those
//! trajectories accumulate before they first reach `K`.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::sampler::poisson;
use super::{OccupationField, WindowSampler};
use crate::error::{Error, Result};
use crate::green::equilibrium;
use crate::lattice::SiteSet;

#[derive(Debug)]
pub struct TiltedSampler {
    base: Arc<WindowSampler>,
    marked: Vec<bool>,
    obstacle_capacity: f64,
    u: f64,
    level: f64,
}

#[derive(Debug, Clone)]
pub struct TiltedSample {
    pub occupation: OccupationField,
    /// `log dP̃/dP̄ = λ η − u cap(K) (e^λ − 1)` with `λ = log(level / u)`.
    pub log_ratio: f64,
    /// Trajectories (of both batches) that visit the obstacle.
    pub obstacle_trajectories: u64,
}

impl TiltedSampler {
    /// `level` is the tilted intensity `a + ε` on the obstacle.
    pub fn new(base: Arc<WindowSampler>, obstacle: &SiteSet, u: f64, level: f64, tol: f64) -> Result<Self> {
        if !(u > 0.0 && level >= u && level.is_finite()) {
            return Err(Error::invalid(format!("tilted level {level} must be at least u = {u} > 0")));
        }
        if obstacle.is_empty() || !obstacle.is_subset_of(base.window()) {
            return Err(Error::invalid("obstacle must be a nonempty subset of the window"));
        }
        let obstacle_capacity = equilibrium(Arc::new(obstacle.clone()), tol)?.capacity();
        let marked = base.window().iter().map(|x| obstacle.contains(x)).collect();
        Ok(TiltedSampler { base, marked, obstacle_capacity, u, level })
    }

    pub fn obstacle_capacity(&self) -> f64 {
        self.obstacle_capacity
    }

    pub fn base(&self) -> &Arc<WindowSampler> {
        &self.base
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<TiltedSample> {
        let n = self.base.window().len();
        let mut times = vec![0.0; n];
        let (eta, mut hits) = self.base.accumulate(self.u, rng, &mut times, Some(&self.marked))?;
        let mut trajectories = eta;
        let extra = poisson((self.level - self.u) * self.base.capacity(), rng)?;
        let mut scratch = vec![0.0; n];
        for _ in 0..extra {
            let start = self.base.draw_start(rng);
            if self.base.run(start, rng, &mut scratch, Some(&self.marked), None)? {
                hits += 1;
                trajectories += 1;
                for (t, s) in times.iter_mut().zip(&scratch) {
                    *t += s;
                }
            }
            scratch.iter_mut().for_each(|s| *s = 0.0);
        }
        let lambda = (self.level / self.u).ln();
        let log_ratio = lambda * hits as f64 - self.obstacle_capacity * (self.level - self.u);
        Ok(TiltedSample {
            occupation: OccupationField { window: self.base.window().clone(), times, level: self.u, trajectories },
            log_ratio,
            obstacle_trajectories: hits,
        })
    }
}
