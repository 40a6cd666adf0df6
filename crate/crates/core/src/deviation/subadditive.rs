//! Empirical `f_{N,A}(t) = −log P[(1/t) L̃_{N,t} ∈ A]` and its subadditivity.
//!
//! `L̃_{N,t} = (1/(dN²)) Σ_x L_{x, dtN^{2−d}} δ_{x/N}` restricted to `B`, and
//! `A` is the set of measures whose integrals against the test functions
//! `f_ℓ` are `δ`-close to those of `ν = N^{−d} Σ_{x ∈ B_N} δ_{x/N}`, the
//! lattice version of Lebesgue measure on `B` and the mean of `(1/t) L̃_{N,t}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{build_window, ClosedBox};
use crate::sim::{run_batches, sample_occupation, WindowSampler, BATCH_SIZE};
use crate::stats::{wilson_at, Proportion};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// `1_B`.
    One,
    /// `y ↦ y_axis`.
    Coordinate { axis: usize },
}

impl TestFunction {
    pub fn eval(&self, y: &[f64]) -> f64 {
        match *self {
            TestFunction::One => 1.0,
            TestFunction::Coordinate { axis } => y[axis],
        }
    }
}

/// `{ρ : |⟨ρ, f_ℓ⟩ − ⟨ν, f_ℓ⟩| < δ for all ℓ}`; `δ = ∞` is the whole space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEvent {
    pub tests: Vec<TestFunction>,
    pub delta: f64,
}

impl ProfileEvent {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.tests.first() != Some(&TestFunction::One) {
            return Err(Error::invalid("the first test function must be the indicator of B"));
        }
        if let Some(TestFunction::Coordinate { axis }) =
            self.tests.iter().find(|t| matches!(t, TestFunction::Coordinate { axis } if *axis >= dim))
        {
            return Err(Error::invalid(format!("coordinate axis {axis} out of range for dimension {dim}")));
        }
        if !(self.delta > 0.0) {
            return Err(Error::invalid(format!("event tolerance must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SubadditivityRow {
    pub t: f64,
    /// Interlacement level `d t N^{2−d}`.
    pub level: f64,
    pub probability: Proportion,
    /// `−log p̂`; `None` with zero hits.
    pub f_hat: Option<f64>,
    /// `−log` of the upper end of the interval.
    pub f_lower: f64,
    /// `−log` of the lower end; `+∞` when the interval reaches zero.
    pub f_upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairCheck {
    pub t1: f64,
    pub t2: f64,
    /// `f̂(t1 + t2) <= f̂(t1) + f̂(t2)` on point estimates, when all exist.
    pub holds_point: Option<bool>,
    /// Not refuted within the joint intervals:
    /// `f_lower(t1 + t2) <= f_upper(t1) + f_upper(t2)`.
    pub holds_within_ci: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubadditivityTable {
    pub n: u32,
    /// Per-row confidence, Bonferroni-adjusted so that all rows hold jointly
    /// at 95%.
    pub row_confidence: f64,
    pub rows: Vec<SubadditivityRow>,
    pub pairs: Vec<PairCheck>,
}

/// Estimate `f_{N,A}(t)` for each `t` and check subadditivity on every pair
/// `(t1, t2)` with `t1 <= t2` and `t1 + t2` among the `t` values.
pub fn subadditivity_scan(
    sampler: &WindowSampler,
    bx: &ClosedBox,
    event: &ProfileEvent,
    n: u32,
    t_values: &[f64],
    samples: u64,
    seed: u64,
    stream_base: u64,
) -> Result<SubadditivityTable> {
    let dim = bx.dim();
    event.validate(dim)?;
    if **sampler.window() != build_window(bx, n)? {
        return Err(Error::invalid("sampler window is not the box window at this scale"));
    }
    if t_values.is_empty() || t_values.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("t values must be positive"));
    }
    let window = sampler.window();
    let nf = n as f64;
    let positions: Vec<Vec<f64>> = window.iter().map(|x| x.iter().map(|&c| c as f64 / nf).collect()).collect();
    let tests: Vec<Vec<f64>> = event.tests.iter().map(|f| positions.iter().map(|y| f.eval(y)).collect()).collect();
    let lattice_volume = nf.powi(dim as i32);
    let centre: Vec<f64> = tests.iter().map(|f| f.iter().sum::<f64>() / lattice_volume).collect();
    let row_confidence = 1.0 - 0.05 / t_values.len() as f64;
    let batches_per_row = samples.div_ceil(BATCH_SIZE);
    let mut rows = Vec::with_capacity(t_values.len());
    for (i, &t) in t_values.iter().enumerate() {
        let level = dim as f64 * t * nf.powi(2 - dim as i32);
        let norm = 1.0 / (t * dim as f64 * nf * nf);
        let hits: u64 = run_batches(samples, seed, stream_base + i as u64 * batches_per_row, |count, rng| {
            let mut h = 0u64;
            for _ in 0..count {
                let occ = sample_occupation(sampler, level, rng)?;
                let inside = tests.iter().zip(&centre).all(|(f, c)| {
                    let integral = norm * f.iter().zip(&occ.times).map(|(a, b)| a * b).sum::<f64>();
                    (integral - c).abs() < event.delta
                });
                h += inside as u64;
            }
            Ok(h)
        })?
        .iter()
        .sum();
        let probability = wilson_at(hits, samples, row_confidence);
        rows.push(SubadditivityRow {
            t,
            level,
            probability,
            f_hat: (hits > 0).then(|| -probability.estimate.ln()),
            f_lower: -probability.upper.ln(),
            f_upper: if probability.lower > 0.0 { -probability.lower.ln() } else { f64::INFINITY },
        });
    }
    let find = |t: f64| rows.iter().find(|r| (r.t - t).abs() <= 1e-9 * t.max(1.0));
    let mut pairs = Vec::new();
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i..] {
            if let Some(s) = find(a.t + b.t) {
                let holds_point = match (s.f_hat, a.f_hat, b.f_hat) {
                    (Some(fs), Some(fa), Some(fb)) => Some(fs <= fa + fb),
                    _ => None,
                };
                pairs.push(PairCheck {
                    t1: a.t,
                    t2: b.t,
                    holds_point,
                    holds_within_ci: s.f_lower <= a.f_upper + b.f_upper,
                });
            }
        }
    }
    Ok(SubadditivityTable { n, row_confidence, rows, pairs })
}
