//! Finite-volume stencil for radial functions on a rotationally symmetric
//! background `dρ² + sn(ρ)² dΩ²` (flat plane, or an n-dimensional space form).

use std::f64::consts::PI;

/// How the sample beyond the outer edge is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum OuterGhost {
    /// Absorbing boundary: the ghost sample is zero.
    Zero,
    /// Quadratic extrapolation from the last three samples.
    Quadratic,
    /// Extrapolation along `a + b log r`, the radial harmonic functions of the
    /// plane. Used for conformal factors, whose far field is conical.
    LogHarmonic,
}

/// Area of the unit sphere `S^k`.
pub(crate) fn unit_sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI * unit_sphere_area(k - 2) / (k as f64 - 1.0),
    }
}

/// Volume of the unit ball in `R^m`.
pub(crate) fn unit_ball_volume(m: usize) -> f64 {
    if m == 0 {
        1.0
    } else {
        unit_sphere_area(m - 1) / m as f64
    }
}

/// Warping function of the space form of curvature `k`.
pub(crate) fn sn(k: f64, rho: f64) -> f64 {
    if k > 0.0 {
        let s = k.sqrt();
        (s * rho).sin() / s
    } else if k < 0.0 {
        let s = (-k).sqrt();
        (s * rho).sinh() / s
    } else {
        rho
    }
}

/// `sn'(ρ) / sn(ρ)`.
pub(crate) fn ct(k: f64, rho: f64) -> f64 {
    if k > 0.0 {
        let s = k.sqrt();
        s / (s * rho).tan()
    } else if k < 0.0 {
        let s = (-k).sqrt();
        s / (s * rho).tanh()
    } else {
        1.0 / rho
    }
}

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

pub(crate) fn gauss5(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let m = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    GAUSS5.iter().map(|&(x, w)| w * f(m + r * x)).sum::<f64>() * r
}

/// Volume of a geodesic ball of radius `rho` in the n-dimensional space form
/// of curvature `k` (radius clamped to the diameter for spheres).
pub(crate) fn space_form_ball_volume(dim: usize, k: f64, rho: f64) -> f64 {
    let rho = if k > 0.0 { rho.min(PI / k.sqrt()) } else { rho };
    if rho <= 0.0 {
        return 0.0;
    }
    let area = unit_sphere_area(dim - 1);
    let pieces = 64.max((rho * 32.0).ceil() as usize);
    let dr = rho / pieces as f64;
    (0..pieces)
        .map(|p| {
            let a = p as f64 * dr;
            gauss5(a, a + dr, |s| sn(k, s).powi(dim as i32 - 1))
        })
        .sum::<f64>()
        * area
}

#[derive(Debug, Clone)]
pub(crate) struct RadialStencil {
    pub n: usize,
    pub h: f64,
    /// Background hypersurface area at `r_i + h/2` (index `n - 1` is the
    /// outer face).
    pub face: Vec<f64>,
    /// Background measure of the cell around sample `i`.
    pub cell: Vec<f64>,
}

impl RadialStencil {
    pub fn new(n: usize, h: f64, dim: usize, k: f64) -> Self {
        let area = unit_sphere_area(dim - 1);
        let face = (0..n)
            .map(|i| area * sn(k, (i as f64 + 0.5) * h).powi(dim as i32 - 1))
            .collect();
        let cell = (0..n)
            .map(|i| {
                let r = i as f64 * h;
                let (a, b) = if i == 0 {
                    (0.0, 0.5 * h)
                } else {
                    (r - 0.5 * h, r + 0.5 * h)
                };
                if k == 0.0 && dim == 2 {
                    PI * (b * b - a * a)
                } else {
                    area * gauss5(a, b, |s| sn(k, s).powi(dim as i32 - 1))
                }
            })
            .collect();
        RadialStencil { n, h, face, cell }
    }

    pub fn flat_plane(n: usize, h: f64) -> Self {
        RadialStencil::new(n, h, 2, 0.0)
    }

    pub fn radius(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn ghost(&self, u: &[f64], kind: OuterGhost) -> f64 {
        let n = self.n;
        match kind {
            OuterGhost::Zero => 0.0,
            OuterGhost::Quadratic => 3.0 * u[n - 1] - 3.0 * u[n - 2] + u[n - 3],
            OuterGhost::LogHarmonic => {
                let (r1, r2) = (self.radius(n - 2), self.radius(n - 1));
                let r3 = r2 + self.h;
                u[n - 1] + (u[n - 1] - u[n - 2]) * (r3 / r2).ln() / (r2 / r1).ln()
            }
        }
    }

    /// Background Laplacian in conservative form.
    pub fn laplacian(&self, u: &[f64], ghost: OuterGhost) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.laplacian_into(u, ghost, &mut out);
        out
    }

    pub fn laplacian_into(&self, u: &[f64], ghost: OuterGhost, out: &mut [f64]) {
        let n = self.n;
        let g = self.ghost(u, ghost);
        let h = self.h;
        let mut influx = 0.0;
        for i in 0..n {
            let next = if i + 1 < n { u[i + 1] } else { g };
            let outflux = self.face[i] * (next - u[i]);
            out[i] = (outflux - influx) / (h * self.cell[i]);
            influx = outflux;
        }
    }

    /// Diagonal of [`Self::laplacian`] for sample `i`.
    pub fn diagonal(&self, i: usize) -> f64 {
        let inner = if i == 0 { 0.0 } else { self.face[i - 1] };
        (self.face[i] + inner) / (self.h * self.cell[i])
    }

    /// Centered first derivative (even reflection at the origin).
    pub fn derivative(&self, u: &[f64], ghost: OuterGhost) -> Vec<f64> {
        let n = self.n;
        let g = self.ghost(u, ghost);
        (0..n)
            .map(|i| {
                if i == 0 {
                    0.0
                } else {
                    let next = if i + 1 < n { u[i + 1] } else { g };
                    (next - u[i - 1]) / (2.0 * self.h)
                }
            })
            .collect()
    }

    /// Centered second derivative (even reflection at the origin).
    pub fn second_derivative(&self, u: &[f64], ghost: OuterGhost) -> Vec<f64> {
        let n = self.n;
        let g = self.ghost(u, ghost);
        let h2 = self.h * self.h;
        (0..n)
            .map(|i| {
                let prev = if i == 0 { u[1] } else { u[i - 1] };
                let next = if i + 1 < n { u[i + 1] } else { g };
                (next - 2.0 * u[i] + prev) / h2
            })
            .collect()
    }
}
