//! Sampling of interlacement occupation times on finite windows, density
//! profiles, Monte Carlo Laplace functionals and the tilted measure.

mod laplace;
mod sampler;
mod tilted;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{build_window, ClosedBox, Site, SiteSet};

pub use laplace::{laplace_from_exponents, mc_laplace, LaplaceEstimate};
pub use sampler::{WindowSampler, DEFAULT_ESCAPE_MARGIN, DEFAULT_STEP_BUDGET};
pub use tilted::{TiltedSample, TiltedSampler};

/// Samples per Monte Carlo batch. Batches, not threads, own RNG streams, so
/// results do not depend on the worker count.
pub const BATCH_SIZE: u64 = 1000;

/// A reproducible random stream: ChaCha8 keyed by `seed`, on stream `stream`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }
}

/// Run `samples` draws in fixed-size batches on the current rayon pool.
/// Batch `b` uses stream `stream_base + b`; outputs come back in batch order.
pub fn run_batches<T, F>(samples: u64, seed: u64, stream_base: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> Result<T> + Sync,
{
    let batches = samples.div_ceil(BATCH_SIZE);
    (0..batches)
        .into_par_iter()
        .map(|b| {
            let count = BATCH_SIZE.min(samples - b * BATCH_SIZE);
            let mut rng = RngStream::new(seed, stream_base + b).rng();
            f(count, &mut rng)
        })
        .collect()
}

/// Window visits of one forward trajectory. Holding times are only drawn at
/// window sites; `reentries` counts returns through the escape sphere.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Trajectory {
    pub entry: Site,
    pub steps: Vec<Site>,
    pub holding_times: Vec<f64>,
    pub reentries: u32,
    pub terminated: bool,
}

/// Occupation times `L_{x,u}` on a window and the number of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationField {
    pub window: Arc<SiteSet>,
    pub times: Vec<f64>,
    pub level: f64,
    pub trajectories: u64,
}

impl OccupationField {
    pub fn total(&self) -> f64 {
        self.times.iter().sum()
    }
}

/// Level-`u` occupation field of the sampler's window.
pub fn sample_occupation(sampler: &WindowSampler, u: f64, rng: &mut ChaCha8Rng) -> Result<OccupationField> {
    if !(u >= 0.0 && u.is_finite()) {
        return Err(Error::invalid(format!("level must be finite and nonnegative, got {u}")));
    }
    let mut times = vec![0.0; sampler.window().len()];
    let (eta, _) = sampler.accumulate(u, rng, &mut times, None)?;
    Ok(OccupationField { window: sampler.window().clone(), times, level: u, trajectories: eta })
}

/// Finite measure with atoms on the scaled lattice `(1/N) Z^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    pub scale: u32,
    pub dim: usize,
    /// Integer sites `x`; the atom sits at `x / N`.
    pub sites: Arc<SiteSet>,
    pub masses: Vec<f64>,
}

impl AtomicMeasure {
    pub fn zero(sites: Arc<SiteSet>, scale: u32) -> Self {
        let n = sites.len();
        AtomicMeasure { scale, dim: sites.dim(), sites, masses: vec![0.0; n] }
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn position(&self, i: usize) -> Vec<f64> {
        self.sites.get(i).iter().map(|&c| c as f64 / self.scale as f64).collect()
    }

    /// `∫ f dμ`.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.masses.len()).map(|i| self.masses[i] * f(&self.position(i))).sum()
    }

    /// Sum of two measures on the same atoms.
    pub fn add(&self, other: &AtomicMeasure) -> Result<AtomicMeasure> {
        if self.sites != other.sites || self.scale != other.scale {
            return Err(Error::invalid("measures live on different atoms"));
        }
        let masses = self.masses.iter().zip(&other.masses).map(|(a, b)| a + b).collect();
        Ok(AtomicMeasure { masses, ..self.clone() })
    }
}

/// Density profile `(1/N^d) Σ_x L_x δ_{x/N}` of an occupation field on `B_N`.
pub fn profile(occ: &OccupationField, n: u32, bx: &ClosedBox) -> Result<AtomicMeasure> {
    let expected = build_window(bx, n)?;
    if *occ.window != expected {
        return Err(Error::invalid("occupation window is not the box window at this scale"));
    }
    let norm = (n as f64).powi(occ.window.dim() as i32);
    Ok(AtomicMeasure {
        scale: n,
        dim: occ.window.dim(),
        sites: occ.window.clone(),
        masses: occ.times.iter().map(|t| t / norm).collect(),
    })
}

#[derive(Serialize)]
struct DumpRecord {
    seed: u64,
    stream: u64,
    eta: u64,
    #[serde(rename = "L")]
    occupation: BTreeMap<String, f64>,
}

/// Append one JSON line `{seed, stream, eta, L}` for a sample.
pub fn write_sample_jsonl(out: &mut impl Write, rng: RngStream, occ: &OccupationField) -> Result<()> {
    let occupation = occ
        .window
        .iter()
        .zip(&occ.times)
        .map(|(x, t)| (x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","), *t))
        .collect();
    let rec = DumpRecord { seed: rng.seed, stream: rng.stream, eta: occ.trajectories, occupation };
    serde_json::to_writer(&mut *out, &rec).map_err(|e| Error::Io(e.into()))?;
    out.write_all(b"\n")?;
    Ok(())
}
