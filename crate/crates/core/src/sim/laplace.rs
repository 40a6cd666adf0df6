//! Monte Carlo estimate of the scaled Laplace functional
//! `Λ_N(V) = (d / N^{d-2}) log E[exp((N^{d-2}/d) ⟨ρ_{N,1}, V⟩)]`.

use serde::Serialize;

use super::{run_batches, WindowSampler};
use crate::error::{Error, Result};
use crate::lattice::LatticeField;

/// Fraction of exponential-moment mass in the top 1% of samples above which
/// the estimate is flagged as heavy-tailed.
const HEAVY_TAIL_SHARE: f64 = 0.5;

#[derive(Debug, Clone, Serialize)]
pub struct LaplaceEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: u64,
    pub heavy_tail: bool,
    /// Share of `Σ e^X` carried by the top 1% of samples.
    pub top_share: f64,
}

/// Turn exponents `X_i` into `scale · log mean e^{X_i}` with a delta-method
/// standard error.
pub fn laplace_from_exponents(xs: &[f64], scale: f64) -> Result<LaplaceEstimate> {
    if xs.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Overflow);
    }
    let n = xs.len() as f64;
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut shifted: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let sum: f64 = shifted.iter().sum();
    let mean = sum / n;
    let var = shifted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let estimate = scale * (mean.ln() + m);
    let std_error = scale * (var / n).sqrt() / mean;
    shifted.sort_unstable_by(|a, b| b.total_cmp(a));
    let top = ((xs.len() as f64 * 0.01).ceil() as usize).max(1);
    let top_share = shifted[..top].iter().sum::<f64>() / sum;
    Ok(LaplaceEstimate {
        estimate,
        std_error,
        samples: xs.len() as u64,
        heavy_tail: top_share > HEAVY_TAIL_SHARE,
        top_share,
    })
}

/// Monte Carlo Laplace functional of `V` (defined on the window `B_N` of the
/// sampler, in scaled units) at scale `N`, from `samples` occupation fields at
/// level `u`. The `1/u` normalisation makes the estimate independent of `u`.
pub fn mc_laplace(
    sampler: &WindowSampler,
    v: &LatticeField,
    n: u32,
    u: f64,
    samples: u64,
    seed: u64,
    stream_base: u64,
) -> Result<LaplaceEstimate> {
    if **v.domain() != **sampler.window() {
        return Err(Error::invalid("potential must be defined on the sampler window"));
    }
    if !(u > 0.0 && u.is_finite()) {
        return Err(Error::invalid(format!("level must be positive, got {u}")));
    }
    let d = v.dim() as f64;
    let nf = n as f64;
    // Lattice weights W(x) = V(x/N) / (d N²).
    let w: Vec<f64> = v.values().iter().map(|x| x / (d * nf * nf)).collect();
    if w.iter().all(|&x| x == 0.0) {
        return Ok(LaplaceEstimate { estimate: 0.0, std_error: 0.0, samples, heavy_tail: false, top_share: 0.0 });
    }
    let batches = run_batches(samples, seed, stream_base, |count, rng| {
        let mut xs = Vec::with_capacity(count as usize);
        let mut occ = vec![0.0; w.len()];
        for _ in 0..count {
            occ.iter_mut().for_each(|t| *t = 0.0);
            sampler.accumulate(u, rng, &mut occ, None)?;
            xs.push(occ.iter().zip(&w).map(|(t, a)| t * a).sum::<f64>());
        }
        Ok(xs)
    })?;
    let xs: Vec<f64> = batches.into_iter().flatten().collect();
    let scale = d / nf.powi(v.dim() as i32 - 2) / u;
    laplace_from_exponents(&xs, scale)
}
