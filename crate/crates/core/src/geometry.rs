//! Compact regions in continuum coordinates and their lattice rasters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{build_window, ClosedBox, Site, SiteSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Closed `delta`-neighbourhood of a base region.
    Dilated {
        base: Box<Region>,
        delta: f64,
    },
}

impl Region {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Region::Ball { center, radius }
    }

    pub fn from_box(b: &ClosedBox) -> Self {
        Region::Box { lo: b.lo().to_vec(), hi: b.hi().to_vec() }
    }

    pub fn dilate(&self, delta: f64) -> Self {
        Region::Dilated { base: Box::new(self.clone()), delta }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Ball { center, .. } => center.len(),
            Region::Box { lo, .. } => lo.len(),
            Region::Dilated { base, .. } => base.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Region::Ball { radius, center } => {
                if !(*radius > 0.0 && radius.is_finite()) || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::invalid(format!("ball needs a finite positive radius, got {radius}")));
                }
            }
            Region::Box { lo, hi } => {
                ClosedBox::new(lo.clone(), hi.clone())?;
            }
            Region::Dilated { base, delta } => {
                if !(*delta >= 0.0 && delta.is_finite()) {
                    return Err(Error::invalid(format!("dilation must be finite and nonnegative, got {delta}")));
                }
                base.validate()?;
            }
        }
        Ok(())
    }

    /// Euclidean distance from `y` to the region (zero inside).
    pub fn distance(&self, y: &[f64]) -> f64 {
        match self {
            Region::Ball { center, radius } => {
                let r: f64 = y.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                (r - radius).max(0.0)
            }
            Region::Box { lo, hi } => y
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (a, b))| (a - v).max(v - b).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt(),
            Region::Dilated { base, delta } => (base.distance(y) - delta).max(0.0),
        }
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        match self {
            // Exact test avoids the square root for the common shapes.
            Region::Ball { center, radius } => {
                y.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>() <= radius * radius
            }
            Region::Box { lo, hi } => y.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *a <= *v && *v <= *b),
            Region::Dilated { base, delta } => base.distance(y) <= *delta,
        }
    }

    /// Axis-aligned bounding box.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Region::Ball { center, radius } => {
                (center.iter().map(|c| c - radius).collect(), center.iter().map(|c| c + radius).collect())
            }
            Region::Box { lo, hi } => (lo.clone(), hi.clone()),
            Region::Dilated { base, delta } => {
                let (lo, hi) = base.bounding_box();
                (lo.iter().map(|v| v - delta).collect(), hi.iter().map(|v| v + delta).collect())
            }
        }
    }

    /// Lattice sites `x` with `x / N` in the region.
    pub fn rasterize(&self, n: u32) -> Result<SiteSet> {
        self.validate()?;
        let (lo, hi) = self.bounding_box();
        let bx = ClosedBox::new(lo.iter().map(|v| v - 1e-12).collect(), hi.iter().map(|v| v + 1e-12).collect())?;
        let candidates = build_window(&bx, n)?;
        let nf = n as f64;
        SiteSet::new(
            self.dim(),
            candidates
                .iter()
                .filter(|x| {
                    let y: Vec<f64> = x.iter().map(|&c| c as f64 / nf).collect();
                    self.contains(&y)
                })
                .map(|x| Site(x.to_vec())),
        )
    }

    /// Whether `self ⊆ outer`, checked on a raster at scale `n`.
    pub fn raster_inside(&self, outer: &Region, n: u32) -> Result<bool> {
        let a = self.rasterize(n)?;
        let b = outer.rasterize(n)?;
        Ok(a.is_subset_of(&b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_ball_raster_counts() {
        let b = Region::ball(vec![0.0; 3], 1.0);
        assert_eq!(b.rasterize(1).unwrap().len(), 7);
        // Sites with |x| <= 2: 1 + 6 + 12 + 8 + 6 = 33.
        assert_eq!(b.rasterize(2).unwrap().len(), 33);
    }

    #[test]
    fn dilation_contains_base() {
        let b = Region::Box { lo: vec![0.0; 3], hi: vec![1.0; 3] };
        let d = b.dilate(0.5);
        assert!(d.contains(&[1.4, 0.5, 0.5]));
        assert!(!d.contains(&[1.4, 1.4, 0.5]));
        assert!(b.raster_inside(&d, 4).unwrap());
        assert!(d.rasterize(4).unwrap().len() > b.rasterize(4).unwrap().len());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Region::ball(vec![0.0; 3], 0.0).validate().is_err());
        assert!(Region::ball(vec![0.0; 3], 1.0).dilate(-1.0).validate().is_err());
    }
}
