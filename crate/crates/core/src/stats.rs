//! Small statistical helpers shared by the Monte Carlo drivers.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

/// Two-sided normal quantile for 95% intervals.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Running mean and variance; merges are associative up to rounding and are
/// always applied in a fixed order by the callers.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        self.m2 / (self.count - 1) as f64
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Binomial proportion with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub hits: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Wilson score interval at 95%; see [`wilson_at`].
pub fn wilson(hits: u64, trials: u64) -> Proportion {
    wilson_at(hits, trials, 0.95)
}

/// Two-sided normal quantile `z` with `P(|Z| <= z) = confidence`.
pub fn normal_quantile(confidence: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + confidence / 2.0)
}

/// Wilson score interval at the given confidence; with zero hits the upper
/// end is the exact one-sided bound `1 - α^{1/n}`, `α = 1 - confidence`.
pub fn wilson_at(hits: u64, trials: u64, confidence: f64) -> Proportion {
    if trials == 0 {
        return Proportion { hits, trials, estimate: f64::NAN, lower: 0.0, upper: 1.0 };
    }
    let n = trials as f64;
    let p = hits as f64 / n;
    if hits == 0 {
        let upper = 1.0 - (1.0 - confidence).powf(1.0 / n);
        return Proportion { hits, trials, estimate: 0.0, lower: 0.0, upper };
    }
    let z = if confidence == 0.95 { Z95 } else { normal_quantile(confidence) };
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Proportion { hits, trials, estimate: p, lower: (centre - half).max(0.0), upper: (centre + half).min(1.0) }
}

/// `log Σ exp(x_i)` computed stably.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
