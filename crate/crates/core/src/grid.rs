//! Sampling grids shared by every field on a metric state.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the 2D chart of a backend (Cartesian coordinates).
///
/// On periodic grids coordinates are taken modulo the cell size. On radial
/// grids the point is `(r cos θ, r sin θ)`; fields there depend on `r` only.
pub type Point = [f64; 2];

/// Smallest accepted resolution along any axis.
pub const MIN_RESOLUTION: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GridSpec {
    /// `n × n` samples at `(i h, j h)`, `h = extent / n`, stored row-major
    /// (`index = j * n + i`, `j` along y).
    Periodic2d { n: usize, extent: f64 },
    /// `n` samples at `r_i = i h`, `h = extent / (n - 1)`; sample 0 is the
    /// origin.
    Radial { n: usize, extent: f64 },
    /// Homogeneous spaces: one sample stands for the whole manifold.
    None,
}

impl GridSpec {
    pub fn periodic(n: usize, extent: f64) -> Result<Self> {
        let g = GridSpec::Periodic2d { n, extent };
        g.validate()?;
        Ok(g)
    }

    pub fn radial(n: usize, extent: f64) -> Result<Self> {
        let g = GridSpec::Radial { n, extent };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GridSpec::Periodic2d { n, extent } | GridSpec::Radial { n, extent } => {
                if n < MIN_RESOLUTION {
                    return Err(Error::InvalidGrid(format!(
                        "resolution {n} below minimum {MIN_RESOLUTION}"
                    )));
                }
                if !(extent.is_finite() && extent > 0.0) {
                    return Err(Error::InvalidGrid(format!(
                        "extent {extent} must be positive"
                    )));
                }
                Ok(())
            }
            GridSpec::None => Ok(()),
        }
    }

    /// Number of stored samples.
    pub fn len(&self) -> usize {
        match *self {
            GridSpec::Periodic2d { n, .. } => n * n,
            GridSpec::Radial { n, .. } => n,
            GridSpec::None => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate spacing `h`.
    pub fn spacing(&self) -> f64 {
        match *self {
            GridSpec::Periodic2d { n, extent } => extent / n as f64,
            GridSpec::Radial { n, extent } => extent / (n - 1) as f64,
            GridSpec::None => f64::INFINITY,
        }
    }

    pub fn resolution(&self) -> usize {
        match *self {
            GridSpec::Periodic2d { n, .. } | GridSpec::Radial { n, .. } => n,
            GridSpec::None => 1,
        }
    }

    pub fn extent(&self) -> f64 {
        match *self {
            GridSpec::Periodic2d { extent, .. } | GridSpec::Radial { extent, .. } => extent,
            GridSpec::None => 0.0,
        }
    }

    /// Chart coordinates of sample `index`. Radial samples lie on the x axis.
    pub fn coords(&self, index: usize) -> Point {
        let h = self.spacing();
        match *self {
            GridSpec::Periodic2d { n, .. } => [(index % n) as f64 * h, (index / n) as f64 * h],
            GridSpec::Radial { .. } => [index as f64 * h, 0.0],
            GridSpec::None => [0.0, 0.0],
        }
    }

    /// Radius of radial sample `i`.
    pub fn radius(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    /// Nearest sample to `p`; periodic coordinates wrap.
    pub fn nearest(&self, p: Point) -> Result<usize> {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return Err(Error::OutsideDomain { x: p[0], y: p[1] });
        }
        let h = self.spacing();
        match *self {
            GridSpec::Periodic2d { n, .. } => {
                let i = (p[0] / h).round().rem_euclid(n as f64) as usize;
                let j = (p[1] / h).round().rem_euclid(n as f64) as usize;
                Ok(j * n + i)
            }
            GridSpec::Radial { n, extent } => {
                let r = p[0].hypot(p[1]);
                if r > extent * (1.0 + 1e-12) {
                    return Err(Error::OutsideDomain { x: p[0], y: p[1] });
                }
                Ok(((r / h).round() as usize).min(n - 1))
            }
            GridSpec::None => Ok(0),
        }
    }

    /// Shortest periodic displacement `b - a` on a periodic grid.
    pub fn periodic_delta(&self, a: Point, b: Point) -> [f64; 2] {
        match *self {
            GridSpec::Periodic2d { extent, .. } => {
                let wrap = |d: f64| d - extent * (d / extent).round();
                [wrap(b[0] - a[0]), wrap(b[1] - a[1])]
            }
            _ => [b[0] - a[0], b[1] - a[1]],
        }
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: self.to_string(),
                found: other.to_string(),
            })
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            GridSpec::Periodic2d { n, extent } => write!(f, "periodic-2d n={n} extent={extent}"),
            GridSpec::Radial { n, extent } => write!(f, "radial-1d n={n} extent={extent}"),
            GridSpec::None => write!(f, "none"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_coarse_grids() {
        assert!(GridSpec::periodic(8, 1.0).is_err());
        assert!(GridSpec::radial(16, 0.0).is_err());
        assert!(GridSpec::radial(16, 1.0).is_ok());
    }

    #[test]
    fn radial_grid_contains_origin() {
        let g = GridSpec::radial(33, 2.0).unwrap();
        assert_eq!(g.radius(0), 0.0);
        assert!((g.radius(32) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn periodic_nearest_wraps() {
        let g = GridSpec::periodic(16, 1.0).unwrap();
        assert_eq!(g.nearest([1.0, 0.0]).unwrap(), 0);
        assert_eq!(g.nearest([-1.0 / 16.0, 0.0]).unwrap(), 15);
        let d = g.periodic_delta([0.05, 0.0], [0.95, 0.0]);
        assert!((d[0] + 0.1).abs() < 1e-12);
    }
}
