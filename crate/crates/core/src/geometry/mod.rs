//! Reduced symmetric metrics, their curvature and the discrete differential
//! operators used by the flow, heat and entropy layers.
//!
//! Four reductions are supported:
//!
//! * `ConformalTorus`: `e^{2φ}(dx² + dy²)` on a periodic square,
//! * `ConformalRadial`: `e^{2φ(r)}(dr² + r² dθ²)` on a disk around the origin,
//! * `EinsteinHomothety`: `c · g₀` with `g₀` the n-dimensional space form of
//!   curvature `K0`; fields on it are radial in the base geodesic radius,
//! * `FlatProduct`: a 2D conformal base times a flat torus `T^m`; fields are
//!   constant along the flat factor.
//!
//! `|Rm|` is the largest absolute sectional curvature.

mod distance;
pub(crate) mod radial;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ScalarField, SymTensorField};
use crate::grid::{GridSpec, Point};

pub(crate) use radial::{OuterGhost, RadialStencil};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Backend {
    ConformalTorus {
        grid: GridSpec,
        phi: Vec<f64>,
    },
    ConformalRadial {
        grid: GridSpec,
        phi: Vec<f64>,
    },
    EinsteinHomothety {
        dim: usize,
        k0: f64,
        scale: f64,
        grid: GridSpec,
    },
    FlatProduct {
        base: Box<Backend>,
        extra_dims: usize,
        extra_extent: f64,
    },
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::ConformalTorus { .. } => "conformal-torus",
            Backend::ConformalRadial { .. } => "conformal-radial",
            Backend::EinsteinHomothety { .. } => "einstein-homothety",
            Backend::FlatProduct { .. } => "flat-product",
        }
    }
}

/// One time slice of a reduced metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricState {
    backend: Backend,
    time: f64,
}

/// Curvature of a [`MetricState`].
#[derive(Debug, Clone)]
pub struct CurvatureReport {
    pub scalar: ScalarField,
    pub ricci: SymTensorField,
    pub rm_norm: ScalarField,
    pub sup_rm: f64,
}

fn exp2(phi: &[f64]) -> Vec<f64> {
    phi.iter().map(|p| (2.0 * p).exp()).collect()
}

fn expm2(phi: &[f64]) -> Vec<f64> {
    phi.iter().map(|p| (-2.0 * p).exp()).collect()
}

/// Periodic 2D finite differences.
pub(crate) struct TorusStencil {
    pub n: usize,
    pub h: f64,
}

impl TorusStencil {
    #[inline]
    pub fn idx(&self, i: isize, j: isize) -> usize {
        let n = self.n as isize;
        (j.rem_euclid(n) * n + i.rem_euclid(n)) as usize
    }

    pub fn laplacian_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        let ih2 = 1.0 / (self.h * self.h);
        for j in 0..n {
            let jm = if j == 0 { n - 1 } else { j - 1 };
            let jp = if j + 1 == n { 0 } else { j + 1 };
            for i in 0..n {
                let im = if i == 0 { n - 1 } else { i - 1 };
                let ip = if i + 1 == n { 0 } else { i + 1 };
                let c = u[j * n + i];
                out[j * n + i] =
                    (u[j * n + ip] + u[j * n + im] + u[jp * n + i] + u[jm * n + i] - 4.0 * c) * ih2;
            }
        }
    }

    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.laplacian_into(u, &mut out);
        out
    }

    /// Centered gradient `(∂x u, ∂y u)`.
    pub fn gradient(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n as isize;
        let mut gx = vec![0.0; u.len()];
        let mut gy = vec![0.0; u.len()];
        let s = 0.5 / self.h;
        for j in 0..n {
            for i in 0..n {
                let k = self.idx(i, j);
                gx[k] = (u[self.idx(i + 1, j)] - u[self.idx(i - 1, j)]) * s;
                gy[k] = (u[self.idx(i, j + 1)] - u[self.idx(i, j - 1)]) * s;
            }
        }
        (gx, gy)
    }

    /// Centered second derivatives `(∂xx, ∂xy, ∂yy)`.
    pub fn second(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n as isize;
        let len = u.len();
        let (mut xx, mut xy, mut yy) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        let ih2 = 1.0 / (self.h * self.h);
        for j in 0..n {
            for i in 0..n {
                let k = self.idx(i, j);
                let c = u[k];
                xx[k] = (u[self.idx(i + 1, j)] - 2.0 * c + u[self.idx(i - 1, j)]) * ih2;
                yy[k] = (u[self.idx(i, j + 1)] - 2.0 * c + u[self.idx(i, j - 1)]) * ih2;
                xy[k] = (u[self.idx(i + 1, j + 1)]
                    - u[self.idx(i + 1, j - 1)]
                    - u[self.idx(i - 1, j + 1)]
                    + u[self.idx(i - 1, j - 1)])
                    * 0.25
                    * ih2;
            }
        }
        (xx, xy, yy)
    }
}

impl MetricState {
    pub fn conformal_torus(phi: ScalarField, time: f64) -> Result<Self> {
        let grid = *phi.grid();
        if !matches!(grid, GridSpec::Periodic2d { .. }) {
            return Err(Error::InvalidState(
                "conformal torus needs a periodic-2d grid".into(),
            ));
        }
        Self::new(
            Backend::ConformalTorus {
                grid,
                phi: phi.into_values(),
            },
            time,
        )
    }

    pub fn conformal_radial(phi: ScalarField, time: f64) -> Result<Self> {
        let grid = *phi.grid();
        if !matches!(grid, GridSpec::Radial { .. }) {
            return Err(Error::InvalidState(
                "conformal radial metric needs a radial grid".into(),
            ));
        }
        Self::new(
            Backend::ConformalRadial {
                grid,
                phi: phi.into_values(),
            },
            time,
        )
    }

    /// `scale · g₀` with `g₀` the space form of curvature `k0`. `grid` is
    /// either [`GridSpec::None`] or a radial grid in the base geodesic radius.
    pub fn einstein_homothety(
        dim: usize,
        k0: f64,
        scale: f64,
        grid: GridSpec,
        time: f64,
    ) -> Result<Self> {
        Self::new(
            Backend::EinsteinHomothety {
                dim,
                k0,
                scale,
                grid,
            },
            time,
        )
    }

    pub fn flat_product(base: MetricState, extra_dims: usize, extra_extent: f64) -> Result<Self> {
        Self::new(
            Backend::FlatProduct {
                base: Box::new(base.backend),
                extra_dims,
                extra_extent,
            },
            base.time,
        )
    }

    pub fn flat_torus(n: usize, extent: f64) -> Result<Self> {
        let grid = GridSpec::periodic(n, extent)?;
        Self::conformal_torus(ScalarField::constant(grid, 0.0), 0.0)
    }

    pub fn flat_plane(n: usize, extent: f64) -> Result<Self> {
        let grid = GridSpec::radial(n, extent)?;
        Self::conformal_radial(ScalarField::constant(grid, 0.0), 0.0)
    }

    pub fn new(backend: Backend, time: f64) -> Result<Self> {
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::InvalidState(format!(
                "time {time} must be finite and ≥ 0"
            )));
        }
        validate(&backend)?;
        Ok(MetricState { backend, time })
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn grid(&self) -> GridSpec {
        grid_of(&self.backend)
    }

    /// Effective dimension.
    pub fn dim(&self) -> usize {
        dim_of(&self.backend)
    }

    /// Conformal factor samples on 2D backends (the base for products).
    pub fn phi(&self) -> Option<&[f64]> {
        phi_of(&self.backend)
    }

    pub(crate) fn with_phi(&self, phi: Vec<f64>) -> MetricState {
        fn replace(b: &Backend, phi: Vec<f64>) -> Backend {
            match b {
                Backend::ConformalTorus { grid, .. } => {
                    Backend::ConformalTorus { grid: *grid, phi }
                }
                Backend::ConformalRadial { grid, .. } => {
                    Backend::ConformalRadial { grid: *grid, phi }
                }
                Backend::FlatProduct {
                    base,
                    extra_dims,
                    extra_extent,
                } => Backend::FlatProduct {
                    base: Box::new(replace(base, phi)),
                    extra_dims: *extra_dims,
                    extra_extent: *extra_extent,
                },
                other => other.clone(),
            }
        }
        MetricState {
            backend: replace(&self.backend, phi),
            time: self.time,
        }
    }

    /// Homothety scale factor `c`.
    pub fn scale(&self) -> Option<f64> {
        match self.backend {
            Backend::EinsteinHomothety { scale, .. } => Some(scale),
            _ => None,
        }
    }

    pub(crate) fn with_scale(&self, c: f64) -> MetricState {
        let mut s = self.clone();
        if let Backend::EinsteinHomothety { scale, .. } = &mut s.backend {
            *scale = c;
        }
        s
    }

    /// The metric `λ · g` at the same time stamp.
    pub fn scaled(&self, lambda: f64) -> Result<MetricState> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale {lambda} must be positive"
            )));
        }
        let half_log = 0.5 * lambda.ln();
        Ok(match &self.backend {
            Backend::EinsteinHomothety { scale, .. } => self.with_scale(scale * lambda),
            Backend::FlatProduct {
                base,
                extra_dims,
                extra_extent,
            } => {
                // The flat factor is rescaled by keeping its samples and
                // stretching its side.
                let base_state = MetricState {
                    backend: (**base).clone(),
                    time: self.time,
                }
                .scaled(lambda)?;
                MetricState {
                    backend: Backend::FlatProduct {
                        base: Box::new(base_state.backend),
                        extra_dims: *extra_dims,
                        extra_extent: extra_extent * lambda.sqrt(),
                    },
                    time: self.time,
                }
            }
            _ => {
                let phi = self.phi().expect("conformal backend");
                self.with_phi(phi.iter().map(|p| p + half_log).collect())
            }
        })
    }

    /// Volume density with respect to the background cell measure.
    pub(crate) fn volume_density(&self) -> Vec<f64> {
        match &self.backend {
            Backend::ConformalTorus { phi, .. } | Backend::ConformalRadial { phi, .. } => exp2(phi),
            Backend::EinsteinHomothety {
                dim, scale, grid, ..
            } => {
                vec![scale.powf(*dim as f64 / 2.0); grid.len()]
            }
            Backend::FlatProduct {
                base,
                extra_dims,
                extra_extent,
            } => {
                let f = extra_extent.powi(*extra_dims as i32);
                exp2(phi_of(base).expect("2D base"))
                    .iter()
                    .map(|v| v * f)
                    .collect()
            }
        }
    }

    /// Multiplier taking the background Laplacian to `Δ_g` on radial-in-base
    /// functions (`e^{-2φ}` or `1/c`).
    pub(crate) fn inverse_metric_factor(&self) -> Vec<f64> {
        match &self.backend {
            Backend::ConformalTorus { phi, .. } | Backend::ConformalRadial { phi, .. } => {
                expm2(phi)
            }
            Backend::EinsteinHomothety { scale, grid, .. } => vec![1.0 / scale; grid.len()],
            Backend::FlatProduct { base, .. } => expm2(phi_of(base).expect("2D base")),
        }
    }

    /// Background measure of each sample's cell.
    pub(crate) fn cell_measure(&self) -> Result<Vec<f64>> {
        let grid = self.grid();
        match grid {
            GridSpec::Periodic2d { .. } => {
                let h = grid.spacing();
                Ok(vec![h * h; grid.len()])
            }
            GridSpec::Radial { .. } => Ok(self.radial_stencil()?.cell),
            GridSpec::None => Err(Error::Unsupported {
                backend: self.backend.name(),
                what: "integration without a grid".into(),
            }),
        }
    }

    pub(crate) fn radial_stencil(&self) -> Result<RadialStencil> {
        let grid = self.grid();
        let (n, h) = match grid {
            GridSpec::Radial { n, .. } => (n, grid.spacing()),
            _ => {
                return Err(Error::Unsupported {
                    backend: self.backend.name(),
                    what: "radial stencil on a non-radial grid".into(),
                })
            }
        };
        Ok(match &self.backend {
            Backend::EinsteinHomothety { dim, k0, .. } => RadialStencil::new(n, h, *dim, *k0),
            _ => RadialStencil::flat_plane(n, h),
        })
    }

    pub(crate) fn torus_stencil(&self) -> Option<TorusStencil> {
        match self.grid() {
            g @ GridSpec::Periodic2d { n, .. } => Some(TorusStencil { n, h: g.spacing() }),
            _ => None,
        }
    }

    /// Geodesic length of the grid step at each sample.
    pub fn geodesic_spacing(&self) -> Vec<f64> {
        let h = self.grid().spacing();
        match &self.backend {
            Backend::EinsteinHomothety { scale, grid, .. } => vec![scale.sqrt() * h; grid.len()],
            _ => self
                .phi()
                .expect("conformal")
                .iter()
                .map(|p| p.exp() * h)
                .collect(),
        }
    }

    /// Radius inside which radial data is not affected by the outer
    /// boundary treatment (half the grid extent); unbounded otherwise.
    pub fn trust_radius(&self) -> f64 {
        match self.grid() {
            GridSpec::Radial { extent, .. } => 0.5 * extent,
            _ => f64::INFINITY,
        }
    }

    fn check(&self, v: &ScalarField) -> Result<()> {
        self.grid().ensure_same(v.grid())
    }

    /// Scalar curvature, Ricci tensor and `|Rm|`.
    pub fn curvature(&self) -> Result<CurvatureReport> {
        let grid = self.grid();
        match &self.backend {
            Backend::ConformalTorus { .. } | Backend::ConformalRadial { .. } => {
                let phi = self.phi().expect("conformal");
                if phi.iter().any(|p| !p.is_finite()) {
                    return Err(Error::InvalidState("non-finite conformal factor".into()));
                }
                let lap = self.flat_laplacian_of_phi()?;
                let r: Vec<f64> = phi
                    .iter()
                    .zip(&lap)
                    .map(|(p, l)| -2.0 * (-2.0 * p).exp() * l)
                    .collect();
                let half: Vec<f64> = r.iter().map(|v| 0.5 * v).collect();
                let rm: Vec<f64> = half.iter().map(|v| v.abs()).collect();
                let sup_rm = rm.iter().copied().fold(0.0, f64::max);
                Ok(CurvatureReport {
                    ricci: SymTensorField::metric_multiple(grid, 0, &half),
                    scalar: ScalarField::from_raw(grid, r),
                    rm_norm: ScalarField::from_raw(grid, rm),
                    sup_rm,
                })
            }
            Backend::EinsteinHomothety { dim, k0, scale, .. } => {
                let k = k0 / scale;
                let n = *dim as f64;
                let len = grid.len();
                Ok(CurvatureReport {
                    scalar: ScalarField::from_raw(grid, vec![n * (n - 1.0) * k; len]),
                    ricci: SymTensorField::metric_multiple(
                        grid,
                        dim - 2,
                        &vec![(n - 1.0) * k; len],
                    ),
                    rm_norm: ScalarField::from_raw(grid, vec![k.abs(); len]),
                    sup_rm: k.abs(),
                })
            }
            Backend::FlatProduct {
                base, extra_dims, ..
            } => {
                let b = self.base_state(base).curvature()?;
                let mut ricci = b.ricci.clone();
                ricci.extra_mult = *extra_dims;
                ricci.extra = vec![0.0; grid.len()];
                Ok(CurvatureReport { ricci, ..b })
            }
        }
    }

    fn base_state(&self, base: &Backend) -> MetricState {
        MetricState {
            backend: base.clone(),
            time: self.time,
        }
    }

    /// Background Laplacian of the conformal factor, with the conical
    /// (log-harmonic) extrapolation at the outer edge of radial grids.
    pub(crate) fn flat_laplacian_of_phi(&self) -> Result<Vec<f64>> {
        let phi = self.phi().ok_or_else(|| Error::Unsupported {
            backend: self.backend.name(),
            what: "conformal factor".into(),
        })?;
        if let Some(ts) = self.torus_stencil() {
            Ok(ts.laplacian(phi))
        } else {
            Ok(self
                .radial_stencil()?
                .laplacian(phi, OuterGhost::LogHarmonic))
        }
    }

    /// `Δ_g v`.
    pub fn laplace_beltrami(&self, v: &ScalarField) -> Result<ScalarField> {
        self.check(v)?;
        let grid = self.grid();
        let flat = match grid {
            GridSpec::Periodic2d { .. } => {
                self.torus_stencil().expect("torus").laplacian(v.values())
            }
            GridSpec::Radial { .. } => self
                .radial_stencil()?
                .laplacian(v.values(), OuterGhost::Quadratic),
            GridSpec::None => return Ok(ScalarField::constant(grid, 0.0)),
        };
        let m = self.inverse_metric_factor();
        Ok(ScalarField::from_raw(
            grid,
            flat.iter().zip(&m).map(|(l, m)| l * m).collect(),
        ))
    }

    /// `|∇v|²_g` with centered differences.
    pub fn grad_norm_sq(&self, v: &ScalarField) -> Result<ScalarField> {
        self.check(v)?;
        let grid = self.grid();
        let m = self.inverse_metric_factor();
        let flat: Vec<f64> = match grid {
            GridSpec::Periodic2d { .. } => {
                let (gx, gy) = self.torus_stencil().expect("torus").gradient(v.values());
                gx.iter().zip(&gy).map(|(a, b)| a * a + b * b).collect()
            }
            GridSpec::Radial { .. } => self
                .radial_stencil()?
                .derivative(v.values(), OuterGhost::Quadratic)
                .iter()
                .map(|d| d * d)
                .collect(),
            GridSpec::None => vec![0.0],
        };
        Ok(ScalarField::from_raw(
            grid,
            flat.iter().zip(&m).map(|(a, b)| a * b).collect(),
        ))
    }

    /// Covariant Hessian in the orthonormal frame of the backend.
    pub fn hessian(&self, v: &ScalarField) -> Result<SymTensorField> {
        self.check(v)?;
        let grid = self.grid();
        let len = grid.len();
        match &self.backend {
            Backend::ConformalTorus { phi, .. } => Ok(torus_hessian(
                self.torus_stencil().expect("torus"),
                grid,
                phi,
                v.values(),
            )),
            Backend::ConformalRadial { phi, .. } => {
                let st = self.radial_stencil()?;
                Ok(radial_conformal_hessian(&st, grid, phi, v.values()))
            }
            Backend::EinsteinHomothety { dim, k0, scale, .. } => {
                let mut t = SymTensorField::zeros(grid, dim - 2);
                if let GridSpec::Radial { .. } = grid {
                    let st = self.radial_stencil()?;
                    let d1 = st.derivative(v.values(), OuterGhost::Quadratic);
                    let d2 = st.second_derivative(v.values(), OuterGhost::Quadratic);
                    for i in 0..len {
                        let rr = d2[i] / scale;
                        let tang = if i == 0 {
                            rr
                        } else {
                            radial::ct(*k0, st.radius(i)) * d1[i] / scale
                        };
                        t.a11[i] = rr;
                        t.a22[i] = tang;
                        t.extra[i] = tang;
                    }
                }
                Ok(t)
            }
            Backend::FlatProduct {
                base, extra_dims, ..
            } => {
                let mut t = self.base_state(base).hessian(v)?;
                t.extra_mult = *extra_dims;
                t.extra = vec![0.0; len];
                Ok(t)
            }
        }
    }

    /// `∫ v dv_g` by the midpoint rule.
    pub fn integrate(&self, v: &ScalarField) -> Result<f64> {
        self.check(v)?;
        let cells = self.cell_measure()?;
        let dens = self.volume_density();
        Ok(v.values()
            .iter()
            .zip(&cells)
            .zip(&dens)
            .map(|((v, c), d)| v * c * d)
            .sum())
    }

    /// Total volume of the sampled domain.
    pub fn total_volume(&self) -> Result<f64> {
        self.integrate(&ScalarField::constant(self.grid(), 1.0))
    }

    /// `∫ ⟨∇v, ∇w⟩ dv_g` from one-sided edge differences. Together with
    /// [`Self::laplace_beltrami`] this satisfies summation by parts exactly on
    /// periodic grids.
    pub fn dirichlet_pairing(&self, v: &ScalarField, w: &ScalarField) -> Result<f64> {
        self.check(v)?;
        self.check(w)?;
        let (v, w) = (v.values(), w.values());
        let base = match self.grid() {
            GridSpec::Periodic2d { n, .. } => {
                let ts = self.torus_stencil().expect("torus");
                let mut s = 0.0;
                for j in 0..n as isize {
                    for i in 0..n as isize {
                        let k = ts.idx(i, j);
                        let kx = ts.idx(i + 1, j);
                        let ky = ts.idx(i, j + 1);
                        s += (v[kx] - v[k]) * (w[kx] - w[k]) + (v[ky] - v[k]) * (w[ky] - w[k]);
                    }
                }
                s
            }
            GridSpec::Radial { n, .. } => {
                let st = self.radial_stencil()?;
                (0..n - 1)
                    .map(|i| st.face[i] * (v[i + 1] - v[i]) * (w[i + 1] - w[i]) / st.h)
                    .sum()
            }
            GridSpec::None => 0.0,
        };
        // In 2D the Dirichlet energy is conformally invariant.
        Ok(match &self.backend {
            Backend::EinsteinHomothety { dim, scale, .. } => {
                base * scale.powf(*dim as f64 / 2.0 - 1.0)
            }
            Backend::FlatProduct {
                extra_dims,
                extra_extent,
                ..
            } => base * extra_extent.powi(*extra_dims as i32),
            _ => base,
        })
    }

    pub fn geodesic_distance(&self, x: Point, y: Point) -> Result<f64> {
        distance::geodesic_distance(self, x, y)
    }

    pub fn ball_volume(&self, x: Point, r: f64) -> Result<f64> {
        distance::ball_volume(self, x, r)
    }

    /// Distances from `x` to every sample (radial grids: measured from the
    /// origin along rays when `x` is the origin).
    pub fn distance_map(&self, x: Point) -> Result<ScalarField> {
        distance::distance_map(self, x)
    }
}

fn torus_hessian(ts: TorusStencil, grid: GridSpec, phi: &[f64], v: &[f64]) -> SymTensorField {
    let (vx, vy) = ts.gradient(v);
    let (px, py) = ts.gradient(phi);
    let (vxx, vxy, vyy) = ts.second(v);
    let mut t = SymTensorField::zeros(grid, 0);
    for k in 0..v.len() {
        let dot = px[k] * vx[k] + py[k] * vy[k];
        let w = (-2.0 * phi[k]).exp();
        t.a11[k] = w * (vxx[k] - 2.0 * px[k] * vx[k] + dot);
        t.a22[k] = w * (vyy[k] - 2.0 * py[k] * vy[k] + dot);
        t.a12[k] = w * (vxy[k] - px[k] * vy[k] - py[k] * vx[k]);
    }
    t
}

fn radial_conformal_hessian(
    st: &RadialStencil,
    grid: GridSpec,
    phi: &[f64],
    v: &[f64],
) -> SymTensorField {
    let d1 = st.derivative(v, OuterGhost::Quadratic);
    let d2 = st.second_derivative(v, OuterGhost::Quadratic);
    let p1 = st.derivative(phi, OuterGhost::LogHarmonic);
    let mut t = SymTensorField::zeros(grid, 0);
    for i in 0..v.len() {
        let w = (-2.0 * phi[i]).exp();
        t.a11[i] = w * (d2[i] - p1[i] * d1[i]);
        t.a22[i] = if i == 0 {
            w * d2[0]
        } else {
            w * (d1[i] / st.radius(i) + p1[i] * d1[i])
        };
    }
    t
}

pub(crate) fn grid_of(b: &Backend) -> GridSpec {
    match b {
        Backend::ConformalTorus { grid, .. }
        | Backend::ConformalRadial { grid, .. }
        | Backend::EinsteinHomothety { grid, .. } => *grid,
        Backend::FlatProduct { base, .. } => grid_of(base),
    }
}

fn dim_of(b: &Backend) -> usize {
    match b {
        Backend::ConformalTorus { .. } | Backend::ConformalRadial { .. } => 2,
        Backend::EinsteinHomothety { dim, .. } => *dim,
        Backend::FlatProduct {
            extra_dims, base, ..
        } => dim_of(base) + extra_dims,
    }
}

fn phi_of(b: &Backend) -> Option<&[f64]> {
    match b {
        Backend::ConformalTorus { phi, .. } | Backend::ConformalRadial { phi, .. } => Some(phi),
        Backend::FlatProduct { base, .. } => phi_of(base),
        Backend::EinsteinHomothety { .. } => None,
    }
}

fn validate(b: &Backend) -> Result<()> {
    match b {
        Backend::ConformalTorus { grid, phi } | Backend::ConformalRadial { grid, phi } => {
            grid.validate()?;
            if phi.len() != grid.len() {
                return Err(Error::InvalidState(
                    "conformal factor length mismatch".into(),
                ));
            }
            if phi
                .iter()
                .any(|p| !p.is_finite() || !(2.0 * p).exp().is_normal())
            {
                return Err(Error::InvalidState(
                    "conformal factor e^{2φ} must be finite and positive".into(),
                ));
            }
            Ok(())
        }
        Backend::EinsteinHomothety {
            dim,
            k0,
            scale,
            grid,
        } => {
            if *dim < 2 {
                return Err(Error::InvalidState(format!("dimension {dim} < 2")));
            }
            if !(scale.is_finite() && *scale > 0.0) {
                return Err(Error::InvalidState(format!(
                    "scale factor {scale} must be positive"
                )));
            }
            if !k0.is_finite() {
                return Err(Error::InvalidState("non-finite base curvature".into()));
            }
            match grid {
                GridSpec::None => Ok(()),
                GridSpec::Radial { extent, .. } => {
                    grid.validate()?;
                    if *k0 > 0.0 && *extent >= std::f64::consts::PI / k0.sqrt() {
                        return Err(Error::InvalidGrid(
                            "radial grid reaches the antipodal point".into(),
                        ));
                    }
                    Ok(())
                }
                GridSpec::Periodic2d { .. } => Err(Error::InvalidGrid(
                    "homothety fields are radial in the base geodesic radius".into(),
                )),
            }
        }
        Backend::FlatProduct {
            base,
            extra_dims,
            extra_extent,
        } => {
            if !matches!(
                **base,
                Backend::ConformalTorus { .. } | Backend::ConformalRadial { .. }
            ) {
                return Err(Error::InvalidState(
                    "flat product needs a 2D conformal base".into(),
                ));
            }
            if *extra_dims < 1 {
                return Err(Error::InvalidState(
                    "flat product needs at least one flat factor".into(),
                ));
            }
            if !(extra_extent.is_finite() && *extra_extent > 0.0) {
                return Err(Error::InvalidState(
                    "flat factor side must be positive".into(),
                ));
            }
            validate(base)
        }
    }
}
