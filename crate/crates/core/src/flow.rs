//! Ricci flow integration, flow traces and the structural monitors of type III
//! flows (curvature decay constant, non-collapsing, distance and volume
//! comparison).
//!
//! Conformal backends evolve `∂t φ = e^{−2φ} Δ₀ φ` with classical RK4 under a
//! CFL restriction; the homothety backend advances its scale factor exactly.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundReport;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::{Backend, MetricState};
use crate::grid::{GridSpec, Point};
use crate::soliton::{ExpanderProfile, HomothetyFamily};

/// When snapshots are stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Cadence {
    /// `t0 + first·ratio^k`, with gaps capped at `max_interval`.
    Geometric {
        first: f64,
        ratio: f64,
        max_interval: f64,
    },
    Uniform {
        interval: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepPolicy {
    /// Fraction of the explicit stability limit used per step.
    pub cfl: f64,
    pub max_dt: f64,
    pub min_dt: f64,
    /// `sup|R|` above which the flow is declared singular.
    pub curvature_ceiling: f64,
    /// Steps changing `sup|R|` by more than this fraction are halved.
    pub max_relative_change: f64,
    pub cadence: Cadence,
    /// Extra snapshots are stored whenever `∫ sup|R| dt` since the last one
    /// exceeds this, so interpolation between snapshots stays accurate.
    pub curvature_budget: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy {
            cfl: 0.25,
            max_dt: 0.05,
            min_dt: 1e-12,
            curvature_ceiling: 1e6,
            max_relative_change: 0.05,
            cadence: Cadence::Geometric {
                first: 0.01,
                ratio: 1.1,
                max_interval: 0.05,
            },
            curvature_budget: 0.005,
        }
    }
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cfl > 0.0
            && self.cfl <= 0.5
            && self.max_dt > 0.0
            && self.min_dt > 0.0
            && self.min_dt <= self.max_dt
            && self.curvature_ceiling > 0.0
            && self.max_relative_change > 0.0
            && self.curvature_budget > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid step policy {self:?}"
            )));
        }
        match self.cadence {
            Cadence::Geometric {
                first,
                ratio,
                max_interval,
            } if first > 0.0 && ratio > 1.0 && max_interval > 0.0 => Ok(()),
            Cadence::Uniform { interval } if interval > 0.0 => Ok(()),
            c => Err(Error::InvalidArgument(format!("invalid cadence {c:?}"))),
        }
    }

    fn snapshot_times(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut out = vec![t0];
        let mut k = 0;
        loop {
            let prev = *out.last().expect("nonempty");
            let next = match self.cadence {
                Cadence::Geometric {
                    first,
                    ratio,
                    max_interval,
                } => (t0 + first * ratio.powi(k))
                    .min(prev + max_interval)
                    .max(prev + first.min(max_interval)),
                Cadence::Uniform { interval } => t0 + (k + 1) as f64 * interval,
            };
            k += 1;
            if next >= t1 - 1e-12 * (1.0 + t1.abs()) {
                out.push(t1);
                return out;
            }
            out.push(next);
        }
    }
}

/// Closed-form flow families used for exact interpolation of a trace.
#[derive(Debug, Clone)]
pub enum ExactKind {
    Homothety(HomothetyFamily),
    /// Self-similar flow through an expander profile (base time `σ` is the
    /// profile itself).
    Expander(Arc<ExpanderProfile>),
}

/// `g(t) = μ · Φ_a^* G(offset + t/μ)` for a closed-form base flow `G` and the
/// radial dilation `Φ_a(r) = a·r` (conformal backends only).
#[derive(Debug, Clone)]
pub struct ExactFamily {
    pub kind: ExactKind,
    pub mu: f64,
    pub offset: f64,
    pub dilation: f64,
}

impl ExactFamily {
    pub fn homothety(family: HomothetyFamily) -> Self {
        ExactFamily {
            kind: ExactKind::Homothety(family),
            mu: 1.0,
            offset: 0.0,
            dilation: 1.0,
        }
    }

    pub fn expander(profile: Arc<ExpanderProfile>) -> Self {
        ExactFamily {
            kind: ExactKind::Expander(profile),
            mu: 1.0,
            offset: 0.0,
            dilation: 1.0,
        }
    }

    pub fn base_time(&self, t: f64) -> f64 {
        self.offset + t / self.mu
    }

    /// `τ⁻¹ g(t_offset + s τ)` as a family in `s`.
    pub fn rescaled(&self, tau: f64, t_offset: f64) -> Self {
        ExactFamily {
            kind: self.kind.clone(),
            mu: self.mu / tau,
            offset: self.offset + t_offset / self.mu,
            dilation: self.dilation,
        }
    }

    pub fn with_dilation(mut self, a: f64) -> Self {
        self.dilation = a;
        self
    }

    pub fn state(&self, grid: GridSpec, t: f64) -> Result<MetricState> {
        let tb = self.base_time(t);
        match &self.kind {
            ExactKind::Homothety(fam) => {
                let c = fam.scale_at(tb);
                if c <= 0.0 {
                    return Err(Error::SingularTime {
                        time: t,
                        curvature: f64::INFINITY,
                    });
                }
                MetricState::einstein_homothety(fam.dim, fam.k0, self.mu * c, grid, t)
            }
            ExactKind::Expander(p) => {
                if tb <= 0.0 {
                    return Err(Error::SingularTime {
                        time: t,
                        curvature: f64::INFINITY,
                    });
                }
                let a = self.dilation;
                let shift = a.ln() + 0.5 * self.mu.ln();
                let phi = ScalarField::from_fn(grid, |q| {
                    p.self_similar_phi(a * q[0].hypot(q[1]), tb) + shift
                })?;
                MetricState::conformal_radial(phi, t)
            }
        }
    }
}

/// Per-snapshot monitor values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub time: f64,
    pub sup_rm: f64,
    pub min_scalar: f64,
    pub max_scalar: f64,
    /// Total volume on compact backends.
    pub volume: Option<f64>,
}

impl MonitorRecord {
    fn of(state: &MetricState) -> Result<Self> {
        let c = state.curvature()?;
        let volume = match state.grid() {
            GridSpec::Periodic2d { .. } => Some(state.total_volume()?),
            _ => None,
        };
        Ok(MonitorRecord {
            time: state.time(),
            sup_rm: c.sup_rm,
            min_scalar: c.scalar.min(),
            max_scalar: c.scalar.max(),
            volume,
        })
    }
}

/// Time-ordered snapshots of a flow.
#[derive(Debug, Clone)]
pub struct FlowTrace {
    snapshots: Vec<MetricState>,
    policy: StepPolicy,
    monitor: Vec<MonitorRecord>,
    exact: Option<ExactFamily>,
}

impl FlowTrace {
    pub fn from_snapshots(snapshots: Vec<MetricState>, policy: StepPolicy) -> Result<Self> {
        let mut trace = FlowTrace {
            snapshots: Vec::with_capacity(snapshots.len()),
            policy,
            monitor: Vec::new(),
            exact: None,
        };
        for s in snapshots {
            trace.push(s)?;
        }
        if trace.snapshots.is_empty() {
            return Err(Error::InvalidArgument(
                "a trace needs at least one snapshot".into(),
            ));
        }
        Ok(trace)
    }

    /// Samples an exact family at `times` on `grid`.
    pub fn from_exact(family: ExactFamily, grid: GridSpec, times: &[f64]) -> Result<Self> {
        let snapshots = times
            .iter()
            .map(|&t| family.state(grid, t))
            .collect::<Result<Vec<_>>>()?;
        let mut trace = FlowTrace::from_snapshots(snapshots, StepPolicy::default())?;
        trace.exact = Some(family);
        Ok(trace)
    }

    /// Appends a snapshot later than every stored one.
    pub fn push(&mut self, state: MetricState) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if state.time() <= last.time() {
                return Err(Error::InvalidArgument(format!(
                    "snapshot time {} does not follow {}",
                    state.time(),
                    last.time()
                )));
            }
            if state.grid() != last.grid() || state.backend().name() != last.backend().name() {
                return Err(Error::GridMismatch {
                    expected: last.grid().to_string(),
                    found: state.grid().to_string(),
                });
            }
        }
        self.monitor.push(MonitorRecord::of(&state)?);
        self.snapshots.push(state);
        Ok(())
    }

    pub fn snapshots(&self) -> &[MetricState] {
        &self.snapshots
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time()).collect()
    }

    pub fn start(&self) -> f64 {
        self.snapshots[0].time()
    }

    pub fn end(&self) -> f64 {
        self.snapshots[self.snapshots.len() - 1].time()
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn grid(&self) -> GridSpec {
        self.snapshots[0].grid()
    }

    pub fn dim(&self) -> usize {
        self.snapshots[0].dim()
    }

    pub fn policy(&self) -> &StepPolicy {
        &self.policy
    }

    pub fn monitor(&self) -> &[MonitorRecord] {
        &self.monitor
    }

    pub fn exact_family(&self) -> Option<&ExactFamily> {
        self.exact.as_ref()
    }

    pub fn covers(&self, a: f64, b: f64) -> bool {
        let tol = 1e-12 * (1.0 + self.end().abs());
        a >= self.start() - tol && b <= self.end() + tol
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if self.covers(t, t) {
            Ok(())
        } else {
            Err(Error::TraceExhausted {
                time: t,
                start: self.start(),
                end: self.end(),
            })
        }
    }

    /// The metric at time `t`: exact when the trace carries a closed-form
    /// family, otherwise linear in `φ` (or `c`) between bracketing snapshots.
    pub fn state_at(&self, t: f64) -> Result<MetricState> {
        self.check_time(t)?;
        if let Some(f) = &self.exact {
            return f.state(self.grid(), t);
        }
        let k = self.snapshots.partition_point(|s| s.time() <= t);
        if k == 0 {
            return Ok(self.snapshots[0].clone().with_time(t));
        }
        if k == self.snapshots.len() {
            return Ok(self.snapshots[k - 1].clone().with_time(t));
        }
        let (a, b) = (&self.snapshots[k - 1], &self.snapshots[k]);
        let w = (t - a.time()) / (b.time() - a.time());
        Ok(match (a.scale(), b.scale()) {
            (Some(ca), Some(cb)) => a.with_scale(ca + w * (cb - ca)),
            _ => {
                let (pa, pb) = (a.phi().expect("conformal"), b.phi().expect("conformal"));
                a.with_phi(pa.iter().zip(pb).map(|(x, y)| x + w * (y - x)).collect())
            }
        }
        .with_time(t))
    }

    /// `(φ, inverse metric factor, volume density)` at `t`, used by the heat
    /// solvers on every stage.
    pub(crate) fn coefficients_at(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = self.state_at(t)?;
        Ok((s.inverse_metric_factor(), s.volume_density()))
    }

    pub(crate) fn with_parts(
        snapshots: Vec<MetricState>,
        policy: StepPolicy,
        exact: Option<ExactFamily>,
    ) -> Result<Self> {
        let mut t = FlowTrace::from_snapshots(snapshots, policy)?;
        t.exact = exact;
        Ok(t)
    }
}

/// Largest stable explicit step for the conformal flow (infinite on the
/// homothety backend).
pub fn stability_bound(state: &MetricState, cfl: f64) -> Result<f64> {
    let m = state.inverse_metric_factor();
    let grid = state.grid();
    let stiff = match state.backend() {
        Backend::EinsteinHomothety { .. } => return Ok(f64::INFINITY),
        _ => match grid {
            GridSpec::Periodic2d { .. } => {
                let h = grid.spacing();
                m.iter().fold(0.0, |a: f64, &b| a.max(b)) * 4.0 / (h * h)
            }
            GridSpec::Radial { .. } => {
                let st = state.radial_stencil()?;
                (0..st.n).map(|i| m[i] * st.diagonal(i)).fold(0.0, f64::max)
            }
            GridSpec::None => return Ok(f64::INFINITY),
        },
    };
    Ok(4.0 * cfl / stiff)
}

fn ricci_rhs(state: &MetricState, phi: &[f64], out: &mut [f64]) -> Result<()> {
    let probe = state.with_phi(phi.to_vec());
    let lap = probe.flat_laplacian_of_phi()?;
    for ((o, l), p) in out.iter_mut().zip(&lap).zip(phi) {
        *o = (-2.0 * p).exp() * l;
    }
    Ok(())
}

fn sup_abs_scalar(state: &MetricState) -> Result<f64> {
    Ok(state.curvature()?.scalar.max_abs())
}

/// One step of Ricci flow with the default step policy.
pub fn step_ricci(state: &MetricState, dt: f64) -> Result<MetricState> {
    step_ricci_with(state, dt, &StepPolicy::default())
}

pub fn step_ricci_with(state: &MetricState, dt: f64, policy: &StepPolicy) -> Result<MetricState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "time step {dt} must be positive"
        )));
    }
    let t1 = state.time() + dt;
    if let Backend::EinsteinHomothety { dim, k0, scale, .. } = state.backend() {
        let c = scale - 2.0 * k0 * (*dim as f64 - 1.0) * dt;
        let curvature = if c > 0.0 { k0.abs() / c } else { f64::INFINITY };
        if curvature > policy.curvature_ceiling {
            return Err(Error::SingularTime {
                time: t1,
                curvature,
            });
        }
        return Ok(state.with_scale(c).with_time(t1));
    }
    let bound = stability_bound(state, policy.cfl)?;
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::StabilityViolation { dt, bound });
    }
    let phi = state.phi().expect("conformal").to_vec();
    let n = phi.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let stage = |k: &[f64], frac: f64| -> Vec<f64> {
        phi.iter().zip(k).map(|(p, k)| p + frac * dt * k).collect()
    };
    ricci_rhs(state, &phi, &mut k1)?;
    ricci_rhs(state, &stage(&k1, 0.5), &mut k2)?;
    ricci_rhs(state, &stage(&k2, 0.5), &mut k3)?;
    ricci_rhs(state, &stage(&k3, 1.0), &mut k4)?;
    let next: Vec<f64> = (0..n)
        .map(|i| phi[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next
        .iter()
        .any(|p| !p.is_finite() || !(2.0 * p).exp().is_normal())
    {
        return Err(Error::SingularTime {
            time: t1,
            curvature: f64::INFINITY,
        });
    }
    let out = state.with_phi(next).with_time(t1);
    let curvature = sup_abs_scalar(&out)?;
    if curvature > policy.curvature_ceiling {
        return Err(Error::SingularTime {
            time: t1,
            curvature,
        });
    }
    Ok(out)
}

/// Integrates the flow over `[t0, t0 + horizon]`, storing snapshots at the
/// policy's cadence.
pub fn run_flow(state0: &MetricState, horizon: f64, policy: &StepPolicy) -> Result<FlowTrace> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must be positive"
        )));
    }
    policy.validate()?;
    let t0 = state0.time();
    let t1 = t0 + horizon;
    let targets = policy.snapshot_times(t0, t1);
    let mut snapshots = vec![state0.clone()];

    if let Backend::EinsteinHomothety {
        dim,
        k0,
        scale,
        grid,
    } = state0.backend()
    {
        let fam = HomothetyFamily::new(*dim, *k0, *scale)?;
        if let Some(ext) = fam.extinction_time() {
            // Time at which K0/c reaches the ceiling.
            let tc = ext - k0 / policy.curvature_ceiling / (2.0 * k0 * (*dim as f64 - 1.0));
            if t0 + tc <= t1 {
                return Err(Error::SingularTime {
                    time: t0 + tc,
                    curvature: policy.curvature_ceiling,
                });
            }
        }
        let exact = ExactFamily {
            kind: ExactKind::Homothety(fam),
            mu: 1.0,
            offset: -t0,
            dilation: 1.0,
        };
        for &t in &targets[1..] {
            snapshots.push(exact.state(*grid, t)?);
        }
        return FlowTrace::with_parts(snapshots, *policy, Some(exact));
    }

    let mut state = state0.clone();
    let mut curvature = sup_abs_scalar(&state)?;
    let mut budget = 0.0;
    for &target in &targets[1..] {
        while state.time() < target {
            let remaining = target - state.time();
            let mut dt = stability_bound(&state, policy.cfl)?.min(policy.max_dt);
            if remaining <= dt * (1.0 + 1e-9) {
                dt = remaining;
            }
            loop {
                let next = step_ricci_with(&state, dt, policy)?;
                let c = sup_abs_scalar(&next)?;
                let change = (c - curvature).abs() / curvature.max(1e-300);
                if change <= policy.max_relative_change || curvature < 1e-12 {
                    budget += dt * curvature.max(c);
                    state = next;
                    curvature = c;
                    break;
                }
                dt *= 0.5;
                if dt < policy.min_dt {
                    return Err(Error::SingularTime {
                        time: state.time(),
                        curvature: c,
                    });
                }
            }
            if budget >= policy.curvature_budget && state.time() < target {
                snapshots.push(state.clone());
                budget = 0.0;
            }
        }
        state = state.with_time(target);
        snapshots.push(state.clone());
        budget = 0.0;
    }
    FlowTrace::from_snapshots(snapshots, *policy)
}

/// Outcome of fitting `sup|Rm|(t) ≤ A/(A + t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeIIIReport {
    /// Smallest feasible `A`, or `None` when no `A ≤ 10⁶` works.
    pub a_star: Option<f64>,
    /// `(t, sup|Rm|, A*/(A* + t))` per snapshot (bound is NaN when
    /// infeasible).
    pub margin: Vec<(f64, f64, f64)>,
    pub reason: Option<String>,
}

const A_MAX: f64 = 1e6;

/// Minimal `A` with `value ≤ A/(A + t)`, in closed form: the bound rises from
/// 0 to 1 in `A`, so `A(t) = value·t/(1 − value)` when `value < 1`.
pub(crate) fn minimal_decay_constant(value: f64, t: f64) -> Option<f64> {
    if value <= 0.0 {
        return Some(0.0);
    }
    if t <= 0.0 {
        return (value <= 1.0).then_some(0.0);
    }
    if value >= 1.0 {
        return None;
    }
    let a = value * t / (1.0 - value);
    (a <= A_MAX).then_some(a)
}

fn fit_decay(series: &[(f64, f64)]) -> TypeIIIReport {
    let mut a_star: f64 = 0.0;
    let mut reason = None;
    for &(t, v) in series {
        match minimal_decay_constant(v, t) {
            Some(a) => a_star = a_star.max(a),
            None => {
                reason = Some(format!(
                    "sup|Rm| = {v:.6e} at t = {t:.6e} exceeds A/(A+t) for every A ≤ {A_MAX:.0e}"
                ));
                break;
            }
        }
    }
    let a = reason.is_none().then_some(a_star);
    let margin = series
        .iter()
        .map(|&(t, v)| {
            (
                t,
                v,
                a.map_or(f64::NAN, |a| {
                    if a == 0.0 && t == 0.0 {
                        1.0
                    } else {
                        a / (a + t)
                    }
                }),
            )
        })
        .collect();
    TypeIIIReport {
        a_star: a,
        margin,
        reason,
    }
}

/// Fits the type III constant; times are measured from the trace start.
pub fn fit_type3_constant(trace: &FlowTrace) -> TypeIIIReport {
    let t0 = trace.start();
    let series: Vec<(f64, f64)> = trace
        .monitor()
        .iter()
        .map(|m| (m.time - t0, m.sup_rm))
        .collect();
    fit_decay(&series)
}

/// The same fit applied to `max R` (used by the volume comparison, whose
/// hypothesis is `0 ≤ R ≤ A/(A + t)`).
pub fn fit_scalar_decay_constant(trace: &FlowTrace) -> TypeIIIReport {
    let t0 = trace.start();
    let series: Vec<(f64, f64)> = trace
        .monitor()
        .iter()
        .map(|m| (m.time - t0, m.max_scalar.max(0.0)))
        .collect();
    fit_decay(&series)
}

/// Where to sample ball volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplePlan {
    Explicit {
        samples: Vec<(Point, f64, f64)>,
    },
    /// `budget` triples with centres drawn from the trust region, radii
    /// log-uniform in `[r_min, r_max]`, times uniform over the trace.
    Random {
        budget: usize,
        seed: u64,
        r_min: f64,
        r_max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonCollapseSample {
    pub x: Point,
    pub r: f64,
    pub t: f64,
    pub volume: f64,
    pub ratio: f64,
    /// `r² · sup_B |Rm|`.
    pub curvature_scale: f64,
    /// The ball covers (almost) the whole compact domain.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonCollapseReport {
    /// Infimum of `|B(x,r;t)|/rⁿ` over admissible samples (`None` if no
    /// sample met the curvature-scale restriction).
    pub kappa_hat: Option<f64>,
    pub samples: Vec<NonCollapseSample>,
    pub worst: Option<usize>,
    pub rejected: usize,
    /// Some admissible ball saturated a compact domain.
    pub compact_collapse: bool,
}

/// Upper bound for `sup |Rm|` over `B(x, r)` at `state`.
fn ball_sup_rm(state: &MetricState, rm: &ScalarField, x: Point, r: f64) -> Result<f64> {
    let grid = state.grid();
    match (state.backend(), grid) {
        (Backend::EinsteinHomothety { .. }, _) | (_, GridSpec::None) => Ok(rm.max()),
        (_, GridSpec::Radial { .. }) => {
            // Radii within ray-distance r of |x| contain the ball.
            let rays = state.distance_map([0.0, 0.0])?;
            let ax = x[0].hypot(x[1]);
            let dx = state.geodesic_distance([0.0, 0.0], [ax, 0.0])?;
            Ok(rays
                .values()
                .iter()
                .zip(rm.values())
                .filter(|(d, _)| (**d - dx).abs() <= r)
                .map(|(_, v)| *v)
                .fold(0.0, f64::max))
        }
        (_, GridSpec::Periodic2d { .. }) => {
            let d = state.distance_map(x)?;
            Ok(d.values()
                .iter()
                .zip(rm.values())
                .filter(|(d, _)| **d <= r)
                .map(|(_, v)| *v)
                .fold(0.0, f64::max))
        }
    }
}

fn random_plan(
    trace: &FlowTrace,
    budget: usize,
    seed: u64,
    r_min: f64,
    r_max: f64,
) -> Result<Vec<(Point, f64, f64)>> {
    if !(r_min > 0.0 && r_max >= r_min) {
        return Err(Error::InvalidArgument(format!(
            "radius range [{r_min}, {r_max}] is invalid"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = trace.grid();
    let (t0, t1) = (trace.start(), trace.end());
    Ok((0..budget)
        .map(|_| {
            let x = match grid {
                GridSpec::Periodic2d { extent, .. } => {
                    [rng.gen::<f64>() * extent, rng.gen::<f64>() * extent]
                }
                GridSpec::Radial { .. } => {
                    let rr = rng.gen::<f64>() * 0.5 * trace.snapshots()[0].trust_radius();
                    let th = rng.gen::<f64>() * std::f64::consts::TAU;
                    [rr * th.cos(), rr * th.sin()]
                }
                GridSpec::None => [0.0, 0.0],
            };
            let r = r_min * (r_max / r_min).powf(rng.gen::<f64>());
            let t = t0 + rng.gen::<f64>() * (t1 - t0);
            (x, r, t)
        })
        .collect())
}

/// Estimates the non-collapsing constant `κ` from sampled ball volumes.
pub fn monitor_noncollapse(trace: &FlowTrace, plan: &SamplePlan) -> Result<NonCollapseReport> {
    let triples = match plan {
        SamplePlan::Explicit { samples } => samples.clone(),
        SamplePlan::Random {
            budget,
            seed,
            r_min,
            r_max,
        } => random_plan(trace, *budget, *seed, *r_min, *r_max)?,
    };
    let n = trace.dim() as f64;
    let evaluated: Vec<Option<NonCollapseSample>> = triples
        .par_iter()
        .map(|&(x, r, t)| -> Result<Option<NonCollapseSample>> {
            let state = trace.state_at(t)?;
            let rm = state.curvature()?.rm_norm;
            let scale = r * r * ball_sup_rm(&state, &rm, x, r)?;
            if scale > 1.0 {
                return Ok(None);
            }
            let volume = state.ball_volume(x, r)?;
            let saturated = match state.grid() {
                GridSpec::Periodic2d { .. } => volume >= 0.99 * state.total_volume()?,
                _ => false,
            };
            Ok(Some(NonCollapseSample {
                x,
                r,
                t,
                volume,
                ratio: volume / r.powf(n),
                curvature_scale: scale,
                saturated,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let rejected = evaluated.iter().filter(|s| s.is_none()).count();
    let samples: Vec<NonCollapseSample> = evaluated.into_iter().flatten().collect();
    let worst = samples
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.ratio.total_cmp(&b.1.ratio))
        .map(|(i, _)| i);
    Ok(NonCollapseReport {
        kappa_hat: worst.map(|i| samples[i].ratio),
        compact_collapse: samples.iter().any(|s| s.saturated),
        samples,
        worst,
        rejected,
    })
}

/// Negative scalar curvature beyond roundoff and boundary extrapolation:
/// `min R < −10⁻⁴ · max|R|` on some snapshot in `[s, t]`.
pub(crate) fn negative_curvature_between(trace: &FlowTrace, s: f64, t: f64) -> bool {
    trace
        .monitor()
        .iter()
        .filter(|m| m.time >= s - 1e-12 && m.time <= t + 1e-12)
        .any(|m| {
            m.min_scalar
                < -NEGATIVE_CURVATURE_TOLERANCE * m.min_scalar.abs().max(m.max_scalar.abs())
        })
}

pub(crate) fn negative_curvature(trace: &FlowTrace) -> bool {
    negative_curvature_between(trace, trace.start(), trace.end())
}

const DISTANCE_TOLERANCE: f64 = 0.05;
const NEGATIVE_CURVATURE_TOLERANCE: f64 = 1e-4;

/// Checks `1 ≤ d(x,y;s)/d(x,y;t) ≤ ((A+t)/(A+s))^A` (distances shrink under
/// nonnegative Ricci curvature and shrink at most at the type III rate). The
/// reversed band `(s/t)^A ≤ d(s)/d(t) ≤ 1` is recorded alongside.
pub fn check_distance_doubling(
    trace: &FlowTrace,
    x: Point,
    y: Point,
    s: f64,
    t: f64,
) -> Result<BoundReport> {
    if !(s < t) {
        return Err(Error::InvalidArgument(format!(
            "need s < t, got s = {s}, t = {t}"
        )));
    }
    if x == y {
        return Err(Error::InvalidArgument(
            "distance check needs distinct points".into(),
        ));
    }
    let (ds, dt) = (
        trace.state_at(s)?.geodesic_distance(x, y)?,
        trace.state_at(t)?.geodesic_distance(x, y)?,
    );
    if ds <= 0.0 || dt <= 0.0 {
        return Err(Error::InvalidArgument("points coincide on the grid".into()));
    }
    let ratio = ds / dt;
    let fit = fit_type3_constant(trace);
    let mut report = BoundReport::new(
        "distance-doubling",
        "1 ≤ d(x,y;s)/d(x,y;t) ≤ ((A+t)/(A+s))^A",
    );
    report.slack = DISTANCE_TOLERANCE;
    report.fitted_constants.insert("ratio".into(), ratio);
    let t0 = trace.start();
    if negative_curvature_between(trace, s, t) {
        report.flag("Ric<0 detected");
    }
    let upper = match fit.a_star {
        Some(a) => {
            report.fitted_constants.insert("A".into(), a);
            let upper = if a == 0.0 {
                1.0
            } else {
                ((a + t - t0) / (a + s - t0)).powf(a)
            };
            let stated_lower = if a == 0.0 {
                1.0
            } else {
                ((s - t0) / (t - t0)).powf(a)
            };
            report.fitted_constants.insert("upper".into(), upper);
            report
                .fitted_constants
                .insert("stated_lower".into(), stated_lower);
            let stated = ratio >= stated_lower * (1.0 - DISTANCE_TOLERANCE)
                && ratio <= 1.0 + DISTANCE_TOLERANCE;
            report.note(format!(
                "stated orientation (s/t)^A ≤ ratio ≤ 1 holds: {stated}"
            ));
            upper
        }
        None => {
            report.flag("type III bound infeasible");
            f64::INFINITY
        }
    };
    // Relative margins so the 5% band applies to both sides.
    report.worst_margin = (ratio - 1.0).min(upper - ratio) / upper.min(ratio).max(1e-300);
    report.finish();
    Ok(report)
}

/// Fractional membership of samples in `B(x, r)` at `state`.
fn ball_weights(state: &MetricState, x: Point, r: f64) -> Result<Vec<f64>> {
    let grid = state.grid();
    if let (GridSpec::Radial { .. }, true) = (grid, x == [0.0, 0.0]) {
        // Cell i spans [r_i − h/2, r_i + h/2]; cut it where the ray distance
        // reaches r.
        let d = state.distance_map(x)?;
        let d = d.values();
        let n = d.len();
        let mut w = vec![0.0; n];
        for i in 0..n {
            let lo = if i == 0 { 0.0 } else { 0.5 * (d[i - 1] + d[i]) };
            let hi = if i + 1 < n {
                0.5 * (d[i] + d[i + 1])
            } else {
                d[i]
            };
            w[i] = if hi <= r {
                1.0
            } else if lo >= r {
                0.0
            } else {
                // Area fraction, linear in the coordinate radius.
                let f = (r - lo) / (hi - lo);
                let h = grid.spacing();
                let (a, b) = if i == 0 {
                    (0.0, 0.5 * h)
                } else {
                    ((i as f64 - 0.5) * h, (i as f64 + 0.5) * h)
                };
                let c = a + f * (b - a);
                (c * c - a * a) / (b * b - a * a)
            };
        }
        return Ok(w);
    }
    let d = state.distance_map(x)?;
    Ok(d.values()
        .iter()
        .map(|&v| if v < r { 1.0 } else { 0.0 })
        .collect())
}

fn set_volume(state: &MetricState, weights: &[f64]) -> Result<f64> {
    let cells = state.cell_measure()?;
    let dens = state.volume_density();
    Ok(weights
        .iter()
        .zip(&cells)
        .zip(&dens)
        .map(|((w, c), d)| w * c * d)
        .sum())
}

/// Checks `((A+s')/(A+t5))^A ≤ vol_{t5}(Ω)/vol_{s'}(Ω) ≤ 1` for the fixed set
/// `Ω = B(x, r; t4)`, with `A` fitted to `0 ≤ R ≤ A/(A+t)`.
pub fn check_volume_comparability(
    trace: &FlowTrace,
    x: Point,
    r: f64,
    s_prime: f64,
    t4: f64,
    t5: f64,
) -> Result<BoundReport> {
    if !(s_prime <= t5) {
        return Err(Error::InvalidArgument(format!(
            "need s' ≤ t5, got {s_prime} > {t5}"
        )));
    }
    let weights = ball_weights(&trace.state_at(t4)?, x, r)?;
    if weights.iter().all(|w| *w == 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ball of radius {r} contains no samples"
        )));
    }
    let v_early = set_volume(&trace.state_at(s_prime)?, &weights)?;
    let v_late = set_volume(&trace.state_at(t5)?, &weights)?;
    let ratio = v_late / v_early;
    let fit = fit_scalar_decay_constant(trace);
    let mut report = BoundReport::new(
        "volume-comparability",
        "((A+s)/(A+t))^A ≤ vol_t(B)/vol_s(B) ≤ 1",
    );
    report.slack = DISTANCE_TOLERANCE;
    report.fitted_constants.insert("ratio".into(), ratio);
    if negative_curvature(trace) {
        report.flag("R<0 detected");
    }
    let t0 = trace.start();
    let lower = match fit.a_star {
        Some(a) => {
            report.fitted_constants.insert("A".into(), a);
            if a == 0.0 {
                1.0
            } else {
                ((a + s_prime - t0) / (a + t5 - t0)).powf(a)
            }
        }
        None => {
            report.flag("scalar curvature decay bound infeasible");
            0.0
        }
    };
    report.fitted_constants.insert("lower".into(), lower);
    report.worst_margin = (ratio - lower).min(1.0 - ratio) / ratio.max(1e-300);
    report.finish();
    Ok(report)
}

#[cfg(test)]
mod tests;
