//! Exact and numerically exact expanding solitons.
//!
//! Two families are provided. Einstein homotheties `c(t)·g₀` solve Ricci flow
//! in closed form. Rotationally symmetric 2D gradient expanders are obtained by
//! integrating the radial reduction of `Rc + Hess f + g/(2σ) = 0` outward from
//! the origin.
//!
//! For `e^{2φ(r)}(dr² + r²dθ²)` with `f' = b·r·e^{2φ}` both components of the
//! soliton equation collapse to
//!
//! ```text
//! φ'' + φ'/r = e^{2φ} [ b (1 + r φ') + 1/(2σ) ],   φ(0) = φ'(0) = 0,
//! ```
//!
//! where `b = −1/(2σ) − R0/2` is fixed by the curvature `R0` at the origin, so
//! the profile is an initial value problem. Far out the metric is a cone
//! `φ ≈ −β log r` with `β = σR0/(1 + σR0)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::MetricState;
use crate::grid::GridSpec;

/// `c(t) = c0 − 2·k0·(n−1)·t` times the space form of curvature `k0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomothetyFamily {
    pub dim: usize,
    pub k0: f64,
    pub c0: f64,
}

impl HomothetyFamily {
    pub fn new(dim: usize, k0: f64, c0: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!("dimension {dim} < 2")));
        }
        if !(c0.is_finite() && c0 > 0.0 && k0.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need c0 > 0 and finite K0, got c0 = {c0}, K0 = {k0}"
            )));
        }
        Ok(HomothetyFamily { dim, k0, c0 })
    }

    pub fn scale_at(&self, t: f64) -> f64 {
        self.c0 - 2.0 * self.k0 * (self.dim as f64 - 1.0) * t
    }

    /// Sectional curvature `K0 / c(t)`.
    pub fn sectional_at(&self, t: f64) -> f64 {
        self.k0 / self.scale_at(t)
    }

    /// Time at which `c` reaches zero (only for positive `K0`).
    pub fn extinction_time(&self) -> Option<f64> {
        (self.k0 > 0.0).then(|| self.c0 / (2.0 * self.k0 * (self.dim as f64 - 1.0)))
    }

    pub fn is_expanding(&self) -> bool {
        self.k0 < 0.0
    }

    pub fn state_at(&self, grid: GridSpec, t: f64) -> Result<MetricState> {
        let c = self.scale_at(t);
        if c <= 0.0 {
            return Err(Error::SingularTime {
                time: t,
                curvature: f64::INFINITY,
            });
        }
        MetricState::einstein_homothety(self.dim, self.k0, c, grid, t)
    }
}

/// Closed-form homothety family.
pub fn einstein_homothety_family(dim: usize, k0: f64, c0: f64) -> Result<HomothetyFamily> {
    HomothetyFamily::new(dim, k0, c0)
}

const PROFILE_STEP: f64 = 1e-3;
const PROFILE_START_EXTENT: f64 = 16.0;
const PROFILE_MAX_EXTENT: f64 = 1024.0;
const PROFILE_DECAY: f64 = 1e-10;

/// Radial expander profile on a fine uniform grid, with cubic Hermite
/// interpolation and an exact cone continuation past the sampled range.
#[derive(Debug, Clone)]
pub struct ExpanderProfile {
    sigma: f64,
    r0: f64,
    b: f64,
    h: f64,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    pot: Vec<f64>,
}

impl ExpanderProfile {
    pub fn solve(r0: f64, sigma: f64) -> Result<Self> {
        if !(r0.is_finite() && r0 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "curvature at the origin {r0} must be ≥ 0"
            )));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "σ = {sigma} must be positive"
            )));
        }
        let b = -0.5 / sigma - 0.5 * r0;
        let mut extent = PROFILE_START_EXTENT;
        loop {
            let p = Self::integrate(r0, sigma, b, extent)?;
            let tail = p.curvature_at(extent).abs();
            if r0 == 0.0 || tail <= PROFILE_DECAY * r0 {
                return Ok(p);
            }
            if extent >= PROFILE_MAX_EXTENT {
                return Err(Error::Shooting(format!(
                    "curvature {tail:.3e} at r = {extent} has not decayed below {:.1e}·R0",
                    PROFILE_DECAY
                )));
            }
            extent *= 2.0;
        }
    }

    fn integrate(r0: f64, sigma: f64, b: f64, extent: f64) -> Result<Self> {
        let h = PROFILE_STEP;
        let n = (extent / h).round() as usize + 1;
        let inv2s = 0.5 / sigma;
        let rhs = |r: f64, y: [f64; 3]| -> [f64; 3] {
            let (p, q) = (y[0], y[1]);
            let e = (2.0 * p).exp();
            [q, -q / r + e * (b * (1.0 + r * q) + inv2s), b * r * e]
        };
        // Series start: φ = a r² + c r⁴ + O(r⁶), f = b r²/2 + O(r⁴).
        let a = -r0 / 8.0;
        let c = (8.0 * a * a + 2.0 * a * b) / 16.0;
        let mut phi = Vec::with_capacity(n);
        let mut dphi = Vec::with_capacity(n);
        let mut pot = Vec::with_capacity(n);
        phi.push(0.0);
        dphi.push(0.0);
        pot.push(0.0);
        let mut y = [
            a * h * h + c * h.powi(4),
            2.0 * a * h + 4.0 * c * h.powi(3),
            0.5 * b * h * h * (1.0 + a * h * h),
        ];
        for i in 1..n {
            phi.push(y[0]);
            dphi.push(y[1]);
            pot.push(y[2]);
            if i + 1 == n {
                break;
            }
            let r = i as f64 * h;
            let k1 = rhs(r, y);
            let k2 = rhs(r + 0.5 * h, std::array::from_fn(|j| y[j] + 0.5 * h * k1[j]));
            let k3 = rhs(r + 0.5 * h, std::array::from_fn(|j| y[j] + 0.5 * h * k2[j]));
            let k4 = rhs(r + h, std::array::from_fn(|j| y[j] + h * k3[j]));
            y = std::array::from_fn(|j| {
                y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            });
            if !y.iter().all(|v| v.is_finite()) || y[0].abs() > 700.0 {
                return Err(Error::Shooting(format!(
                    "profile diverged near r = {:.3}",
                    r + h
                )));
            }
        }
        Ok(ExpanderProfile {
            sigma,
            r0,
            b,
            h,
            phi,
            dphi,
            pot,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn curvature_at_origin(&self) -> f64 {
        self.r0
    }

    /// Slope of the potential: `f' = b·r·e^{2φ}`.
    pub fn b(&self) -> f64 {
        self.b
    }

    /// Radius up to which the profile is sampled.
    pub fn extent(&self) -> f64 {
        (self.phi.len() - 1) as f64 * self.h
    }

    /// Cone exponent `β` with `φ ≈ −β log r` at infinity.
    pub fn cone_exponent(&self) -> f64 {
        self.sigma * self.r0 / (1.0 + self.sigma * self.r0)
    }

    fn hermite(&self, y: &[f64], dy: &[f64], r: f64) -> f64 {
        let t = r / self.h;
        let i = (t.floor() as usize).min(y.len() - 2);
        let s = t - i as f64;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * y[i] + h10 * self.h * dy[i] + h01 * y[i + 1] + h11 * self.h * dy[i + 1]
    }

    fn tail(&self) -> (f64, f64, f64, f64) {
        let last = self.phi.len() - 1;
        let rr = self.extent();
        (rr, self.phi[last], -rr * self.dphi[last], self.pot[last])
    }

    pub fn phi_at(&self, r: f64) -> f64 {
        let r = r.abs();
        if r <= self.extent() {
            return self.hermite(&self.phi, &self.dphi, r);
        }
        let (rr, p, beta, _) = self.tail();
        p - beta * (r / rr).ln()
    }

    pub fn dphi_at(&self, r: f64) -> f64 {
        let r = r.abs();
        if r <= self.extent() {
            // Derivative of the Hermite interpolant.
            let t = r / self.h;
            let i = (t.floor() as usize).min(self.phi.len() - 2);
            let s = t - i as f64;
            let s2 = s * s;
            let d00 = (6.0 * s2 - 6.0 * s) / self.h;
            let d10 = 3.0 * s2 - 4.0 * s + 1.0;
            let d01 = (-6.0 * s2 + 6.0 * s) / self.h;
            let d11 = 3.0 * s2 - 2.0 * s;
            return d00 * self.phi[i]
                + d10 * self.dphi[i]
                + d01 * self.phi[i + 1]
                + d11 * self.dphi[i + 1];
        }
        let (_, _, beta, _) = self.tail();
        -beta / r
    }

    /// Potential with `f(0) = 0`.
    pub fn potential_at(&self, r: f64) -> f64 {
        let r = r.abs();
        if r <= self.extent() {
            let t = r / self.h;
            let i = (t.floor() as usize).min(self.pot.len() - 2);
            let slope = |k: usize| self.b * k as f64 * self.h * (2.0 * self.phi[k]).exp();
            let s = t - i as f64;
            let (s2, s3) = (s * s, s * s * s);
            return (2.0 * s3 - 3.0 * s2 + 1.0) * self.pot[i]
                + (s3 - 2.0 * s2 + s) * self.h * slope(i)
                + (-2.0 * s3 + 3.0 * s2) * self.pot[i + 1]
                + (s3 - s2) * self.h * slope(i + 1);
        }
        let (rr, p, beta, f) = self.tail();
        let e = 2.0 - 2.0 * beta;
        f + self.b * (2.0 * p).exp() * rr.powf(2.0 * beta) * (r.powf(e) - rr.powf(e)) / e
    }

    /// Scalar curvature `R(r) = −2[b(1 + rφ') + 1/(2σ)]`.
    pub fn curvature_at(&self, r: f64) -> f64 {
        -2.0 * (self.b * (1.0 + r.abs() * self.dphi_at(r)) + 0.5 / self.sigma)
    }

    /// Dilation of the radial coordinate at time `t` of the self-similar flow
    /// through the profile at time `σ`.
    pub fn dilation_at(&self, t: f64) -> f64 {
        (t / self.sigma).powf(self.sigma * self.b)
    }

    /// Conformal factor of the self-similar flow `g(t) = (t/σ)·Φ_t^* g_σ`.
    pub fn self_similar_phi(&self, r: f64, t: f64) -> f64 {
        let lam = self.dilation_at(t);
        self.phi_at(lam * r) + lam.ln() + 0.5 * (t / self.sigma).ln()
    }

    /// Largest pointwise defect `|Rc + Hess f + g/(2σ)|_g` at the fine nodes
    /// with `r ≤ radius`, from fourth-order differences of the sampled `φ` and
    /// `f` (independent of the ODE right-hand side).
    pub fn residual(&self, radius: f64) -> f64 {
        let h = self.h;
        let last = ((radius / h).floor() as usize).min(self.phi.len() - 3);
        let d1 = |y: &[f64], i: usize| -> f64 {
            let at = |k: isize| y[k.unsigned_abs()];
            let i = i as isize;
            (-at(i + 2) + 8.0 * at(i + 1) - 8.0 * at(i - 1) + at(i - 2)) / (12.0 * h)
        };
        let d2 = |y: &[f64], i: usize| -> f64 {
            let at = |k: isize| y[k.unsigned_abs()];
            let i = i as isize;
            (-at(i + 2) + 16.0 * at(i + 1) - 30.0 * at(i) + 16.0 * at(i - 1) - at(i - 2))
                / (12.0 * h * h)
        };
        let mut worst: f64 = 0.0;
        for i in 0..=last {
            let r = i as f64 * h;
            let (p1, p2) = (d1(&self.phi, i), d2(&self.phi, i));
            let (f1, f2) = (d1(&self.pot, i), d2(&self.pot, i));
            let w = (-2.0 * self.phi[i]).exp();
            let (lap, tang) = if i == 0 {
                (2.0 * p2, f2)
            } else {
                (p2 + p1 / r, f1 / r + p1 * f1)
            };
            let k = -w * lap;
            let rr = k + w * (f2 - p1 * f1) + 0.5 / self.sigma;
            let tt = k + w * tang + 0.5 / self.sigma;
            worst = worst.max((rr * rr + tt * tt).sqrt());
        }
        worst
    }
}

/// An expander sampled on a radial grid, with its potential at `σ_ref`.
#[derive(Debug, Clone)]
pub struct SolitonFixture {
    /// The metric at time `σ_ref` of its self-similar flow.
    pub state: MetricState,
    pub potential: ScalarField,
    pub sigma_ref: f64,
    /// Largest pointwise defect norm inside the trust radius.
    pub residual: f64,
    pub profile: Arc<ExpanderProfile>,
}

/// Rotationally symmetric gradient expander with scalar curvature `r0` at the
/// origin, sampled on `grid` (radial).
pub fn solve_expander_profile(r0: f64, sigma_ref: f64, grid: GridSpec) -> Result<SolitonFixture> {
    if !matches!(grid, GridSpec::Radial { .. }) {
        return Err(Error::InvalidGrid(
            "expander profiles are sampled on radial grids".into(),
        ));
    }
    grid.validate()?;
    let profile = Arc::new(ExpanderProfile::solve(r0, sigma_ref)?);
    let phi = ScalarField::from_fn(grid, |p| profile.phi_at(p[0]))?;
    let potential = ScalarField::from_fn(grid, |p| profile.potential_at(p[0]))?;
    let state = MetricState::conformal_radial(phi, sigma_ref)?;
    let residual = profile.residual(state.trust_radius().min(profile.extent()));
    Ok(SolitonFixture {
        state,
        potential,
        sigma_ref,
        residual,
        profile,
    })
}
