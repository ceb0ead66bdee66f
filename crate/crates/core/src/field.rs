use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Real samples aligned with a [`GridSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "{} samples for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite sample {v} at {i}"
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        ScalarField {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Samples `f` at the chart coordinates of every grid point.
    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        ScalarField::new(grid, values)
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Value at `p`: linear in the radius on radial grids, bilinear and
    /// periodic on tori.
    pub fn sample(&self, p: [f64; 2]) -> Result<f64> {
        let h = self.grid.spacing();
        match self.grid {
            GridSpec::None => Ok(self.values[0]),
            GridSpec::Radial { n, extent } => {
                let r = p[0].hypot(p[1]);
                if !(r <= extent * (1.0 + 1e-12)) {
                    return Err(Error::OutsideDomain { x: p[0], y: p[1] });
                }
                let t = r / h;
                let i = (t.floor() as usize).min(n - 2);
                let f = t - i as f64;
                Ok(self.values[i] * (1.0 - f) + self.values[i + 1] * f)
            }
            GridSpec::Periodic2d { n, .. } => {
                if !(p[0].is_finite() && p[1].is_finite()) {
                    return Err(Error::OutsideDomain { x: p[0], y: p[1] });
                }
                let (tx, ty) = (p[0] / h, p[1] / h);
                let (fx, fy) = (tx - tx.floor(), ty - ty.floor());
                let i = (tx.floor() as i64).rem_euclid(n as i64) as usize;
                let j = (ty.floor() as i64).rem_euclid(n as i64) as usize;
                let (i1, j1) = ((i + 1) % n, (j + 1) % n);
                let v = |a: usize, b: usize| self.values[b * n + a];
                Ok((1.0 - fx) * (1.0 - fy) * v(i, j)
                    + fx * (1.0 - fy) * v(i1, j)
                    + (1.0 - fx) * fy * v(i, j1)
                    + fx * fy * v(i1, j1))
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, a: f64) -> ScalarField {
        self.map(|v| a * v)
    }

    pub fn zip_with(
        &self,
        other: &ScalarField,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ScalarField> {
        self.grid.ensure_same(&other.grid)?;
        Ok(ScalarField::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }
}

/// Symmetric 2-tensor samples in an orthonormal frame.
///
/// The 2×2 block holds the components along the chart directions (x/y on the
/// torus, radial/angular on radial grids). Any remaining directions carry a
/// multiple of the identity: `extra_mult` directions each with eigenvalue
/// `extra[i]` (spherical directions of an n-dimensional homothety, or the flat
/// factor of a product).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymTensorField {
    grid: GridSpec,
    pub a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a22: Vec<f64>,
    pub extra: Vec<f64>,
    pub extra_mult: usize,
}

impl SymTensorField {
    pub fn zeros(grid: GridSpec, extra_mult: usize) -> Self {
        let n = grid.len();
        SymTensorField {
            grid,
            a11: vec![0.0; n],
            a12: vec![0.0; n],
            a22: vec![0.0; n],
            extra: vec![0.0; n],
            extra_mult,
        }
    }

    /// `s · g` sample-wise.
    pub fn metric_multiple(grid: GridSpec, extra_mult: usize, s: &[f64]) -> Self {
        SymTensorField {
            grid,
            a11: s.to_vec(),
            a12: vec![0.0; s.len()],
            a22: s.to_vec(),
            extra: s.to_vec(),
            extra_mult,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.a11.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a11.is_empty()
    }

    pub fn dim(&self) -> usize {
        2 + self.extra_mult
    }

    pub fn trace(&self) -> Vec<f64> {
        let m = self.extra_mult as f64;
        (0..self.len())
            .map(|i| self.a11[i] + self.a22[i] + m * self.extra[i])
            .collect()
    }

    /// `|T|²_g` sample-wise.
    pub fn norm_sq(&self) -> Vec<f64> {
        let m = self.extra_mult as f64;
        (0..self.len())
            .map(|i| {
                self.a11[i].powi(2)
                    + 2.0 * self.a12[i].powi(2)
                    + self.a22[i].powi(2)
                    + m * self.extra[i].powi(2)
            })
            .collect()
    }

    pub fn add(&self, other: &SymTensorField) -> Result<SymTensorField> {
        self.grid.ensure_same(&other.grid)?;
        if self.extra_mult != other.extra_mult {
            return Err(Error::InvalidArgument("tensor dimension mismatch".into()));
        }
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Ok(SymTensorField {
            grid: self.grid,
            a11: add(&self.a11, &other.a11),
            a12: add(&self.a12, &other.a12),
            a22: add(&self.a22, &other.a22),
            extra: add(&self.extra, &other.extra),
            extra_mult: self.extra_mult,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.a11
            .iter()
            .chain(&self.a12)
            .chain(&self.a22)
            .chain(&self.extra)
            .all(|v| v.is_finite())
    }
}
