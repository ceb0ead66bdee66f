//! Blow-downs of long-time flows: the rescaled flows `g_k(s) = τ_k⁻¹
//! g(t_k + sτ_k)`, conjugate kernels sunk at `s = 6`, their potentials and
//! entropies, and proxies for convergence to an expanding soliton.
//!
//! Convergence is measured by the curvature profile as a function of the
//! distance to the anchor (invariant under diffeomorphisms fixing it) and by
//! curvature at the anchor. This is a stand-in for pointed Cheeger–Gromov
//! convergence on symmetric backends, not a proof of it.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::{compute_wplus, defect_integrals, defect_tensor, f_from_u};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::flow::{monitor_noncollapse, ExactFamily, ExactKind, FlowTrace, SamplePlan};
use crate::grid::{GridSpec, Point};
use crate::heat::{solve_conjugate_kernel, HeatOptions, KernelSolution};

/// `τ⁻¹ g(t_offset + sτ)` for all snapshots with `t ≥ t_offset`; requires
/// `[t_offset + τ, t_offset + 4τ]` inside the trace.
pub fn rescale_flow(trace: &FlowTrace, tau: f64, t_offset: f64) -> Result<FlowTrace> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "τ = {tau} must be positive"
        )));
    }
    if !trace.covers(t_offset + tau, t_offset + 4.0 * tau) {
        return Err(Error::TraceExhausted {
            time: t_offset + 4.0 * tau,
            start: trace.start(),
            end: trace.end(),
        });
    }
    let snapshots = trace
        .snapshots()
        .iter()
        .filter(|s| s.time() >= t_offset)
        .map(|s| Ok(s.scaled(1.0 / tau)?.with_time((s.time() - t_offset) / tau)))
        .collect::<Result<Vec<_>>>()?;
    let exact = trace.exact_family().map(|f| f.rescaled(tau, t_offset));
    FlowTrace::with_parts(snapshots, *trace.policy(), exact)
}

/// The flow being blown down.
#[derive(Debug, Clone)]
pub enum BaseFlow {
    /// A stored trace (numerical or exact).
    Trace(Arc<FlowTrace>),
    /// A closed-form family sampled on `grid` after rescaling. Every level
    /// sees the same grid geometry at `s = 1`: expander families are pulled
    /// back by the radial dilation fixing the profile coordinate, homothety
    /// grids are stretched to a fixed geodesic extent.
    Exact { family: ExactFamily, grid: GridSpec },
}

impl BaseFlow {
    fn rescaled(&self, tau: f64, t_offset: f64, s_end: f64, samples: usize) -> Result<FlowTrace> {
        match self {
            BaseFlow::Trace(t) => {
                if !t.covers(t_offset + tau, t_offset + s_end * tau) {
                    return Err(Error::TraceExhausted {
                        time: t_offset + s_end * tau,
                        start: t.start(),
                        end: t.end(),
                    });
                }
                rescale_flow(t, tau, t_offset)
            }
            BaseFlow::Exact { family, grid } => {
                let mut f = family.rescaled(tau, t_offset);
                let mut level_grid = *grid;
                match &f.kind {
                    ExactKind::Expander(p) => {
                        let a = f.dilation / p.dilation_at(f.base_time(1.0));
                        f = f.with_dilation(a);
                    }
                    ExactKind::Homothety(h) => {
                        // Same geodesic grid at s = 1 on every level.
                        if let GridSpec::Radial { n, extent } = *grid {
                            let c1 = f.mu * h.scale_at(f.base_time(1.0));
                            level_grid = GridSpec::radial(n, extent / c1.sqrt())?;
                        }
                    }
                }
                let times: Vec<f64> = (0..samples)
                    .map(|i| 1.0 + (s_end - 1.0) * i as f64 / (samples - 1) as f64)
                    .collect();
                FlowTrace::from_exact(f, level_grid, &times)
            }
        }
    }

    fn base_trace(&self) -> Option<&Arc<FlowTrace>> {
        match self {
            BaseFlow::Trace(t) => Some(t),
            BaseFlow::Exact { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlowdownConfig {
    pub tau0: f64,
    /// `τ_{k+1}/τ_k`.
    pub ratio: f64,
    pub levels: usize,
    pub t_offset: f64,
    /// Sink time in rescaled units.
    pub sink: f64,
    /// Entropy window in `s`.
    pub s_window: (f64, f64),
    pub s_samples: usize,
    /// Delta width in rescaled units.
    pub width: f64,
    pub safety: f64,
}

impl Default for BlowdownConfig {
    fn default() -> Self {
        BlowdownConfig {
            tau0: 1.0,
            ratio: 2.0,
            levels: 5,
            t_offset: 0.0,
            sink: 6.0,
            s_window: (1.0, 3.0),
            s_samples: 9,
            width: 0.1,
            safety: 0.9,
        }
    }
}

impl BlowdownConfig {
    /// `τ0 = horizon/96`, so that `6 τ_4 = horizon`.
    pub fn for_horizon(horizon: f64) -> Self {
        BlowdownConfig {
            tau0: horizon / 96.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.s_window;
        let ok = self.tau0 > 0.0
            && self.ratio >= 2.0
            && self.levels >= 1
            && self.t_offset >= 0.0
            && a > 0.0
            && b > a
            && self.sink > b.max(4.0)
            && self.s_samples >= 3
            && self.width > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid blow-down configuration {self:?}"
            )))
        }
    }

    pub fn taus(&self) -> Vec<f64> {
        (0..self.levels)
            .map(|k| self.tau0 * self.ratio.powi(k as i32))
            .collect()
    }

    pub fn s_values(&self) -> Vec<f64> {
        let (a, b) = self.s_window;
        (0..self.s_samples)
            .map(|i| a + (b - a) * i as f64 / (self.s_samples - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub s: f64,
    pub w_plus: f64,
    /// `D_k(s) = ∫2s|Rc + Hess f_k + g_k/(2s)|² u_k dv`.
    pub defect: f64,
    /// `∫u_k dv_{g_k}`.
    pub mass: f64,
    /// `max(−f_k)`.
    pub neg_f_max: f64,
    pub sup_rm: f64,
    /// Largest pointwise `|Rc + g_k/(2s)|²`, the defect with `f ≡ 0`.
    pub metric_defect: f64,
}

#[derive(Debug, Clone)]
pub struct BlowdownLevel {
    pub k: usize,
    pub tau: f64,
    pub trace: Arc<FlowTrace>,
    pub kernel: KernelSolution,
    pub records: Vec<LevelRecord>,
    /// `(distance to the anchor, scalar curvature)` at the profile time.
    pub profile: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct BlowdownSequence {
    pub anchor: Point,
    pub config: BlowdownConfig,
    pub levels: Vec<BlowdownLevel>,
    pub flags: Vec<String>,
}

/// Time at which curvature profiles are compared.
pub const PROFILE_TIME: f64 = 2.0;

/// `u_k(·, s) = τ^{n/2} G(·, sτ; x0, sink·τ)` on the rescaled flow, and the
/// potentials `f_k` at the stored `s` inside the entropy window.
pub fn build_blowdown_kernel(
    rescaled: &Arc<FlowTrace>,
    x0: Point,
    config: &BlowdownConfig,
) -> Result<(KernelSolution, Vec<(f64, ScalarField)>)> {
    config.validate()?;
    let mut store = config.s_values();
    store.extend([PROFILE_TIME, 4.0]);
    let opts = HeatOptions {
        until: Some(config.s_window.0.min(1.0)),
        store_count: 0,
        store_times: store,
        safety: config.safety,
    };
    let kernel = solve_conjugate_kernel(rescaled, x0, config.sink, config.width, &opts)?;
    let potentials = config
        .s_values()
        .iter()
        .map(|&s| {
            let k = kernel.nearest_index(s);
            let state = rescaled.state_at(kernel.times()[k])?;
            Ok((s, f_from_u(&state, &kernel.fields()[k], s)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((kernel, potentials))
}

fn curvature_profile(trace: &FlowTrace, x0: Point, s: f64) -> Result<Vec<(f64, f64)>> {
    let state = trace.state_at(s)?;
    let r = state.curvature()?.scalar;
    let grid = state.grid();
    match grid {
        GridSpec::Radial { .. } => {
            let d = state.distance_map(x0)?;
            let cut = state.trust_radius();
            Ok((0..grid.len())
                .filter(|&i| grid.radius(i) <= cut)
                .map(|i| (d.values()[i], r.values()[i]))
                .collect())
        }
        GridSpec::Periodic2d { n, .. } => {
            // Along the x-line through the anchor, by arclength.
            let phi = state.phi().expect("torus");
            let k0 = grid.nearest(x0)?;
            let (i0, j0) = (k0 % n, k0 / n);
            let h = grid.spacing();
            let mut out = vec![(0.0, r.values()[k0])];
            let mut d = 0.0;
            for step in 1..=n / 2 {
                let (a, b) = (j0 * n + (i0 + step - 1) % n, j0 * n + (i0 + step) % n);
                d += 0.5 * h * (phi[a].exp() + phi[b].exp());
                out.push((d, r.values()[b]));
            }
            Ok(out)
        }
        GridSpec::None => Ok(vec![(0.0, r.values()[0])]),
    }
}

fn interp_profile(p: &[(f64, f64)], d: f64) -> f64 {
    if p.len() == 1 || d <= p[0].0 {
        return p[0].1;
    }
    let k = p.partition_point(|q| q.0 < d);
    if k >= p.len() {
        return p[p.len() - 1].1;
    }
    let (a, b) = (p[k - 1], p[k]);
    a.1 + (b.1 - a.1) * (d - a.0) / (b.0 - a.0)
}

/// L∞ distance of two profiles over their common distance range.
pub fn profile_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let reach = a[a.len() - 1].0.min(b[b.len() - 1].0);
    let count = 256;
    (0..=count)
        .map(|i| {
            let d = reach * i as f64 / count as f64;
            (interp_profile(a, d) - interp_profile(b, d)).abs()
        })
        .fold(0.0, f64::max)
}

fn build_level(
    base: &BaseFlow,
    x0: Point,
    config: &BlowdownConfig,
    k: usize,
    tau: f64,
) -> Result<BlowdownLevel> {
    let samples = 4 * ((config.sink - 1.0) * 20.0) as usize + 1;
    let trace = Arc::new(base.rescaled(tau, config.t_offset, config.sink, samples)?);
    let (kernel, potentials) = build_blowdown_kernel(&trace, x0, config)?;
    let records = potentials
        .par_iter()
        .map(|(s, f)| -> Result<LevelRecord> {
            let idx = kernel.nearest_index(*s);
            let u = &kernel.fields()[idx];
            let state = trace.state_at(kernel.times()[idx])?;
            let w_plus = compute_wplus(&state, u, *s)?;
            let (weighted, _) = defect_integrals(&state, f, u, *s)?;
            let zero = ScalarField::constant(state.grid(), 0.0);
            let metric_defect = defect_tensor(&state, &zero, *s)?
                .norm_sq()
                .into_iter()
                .fold(0.0, f64::max);
            Ok(LevelRecord {
                s: *s,
                w_plus,
                defect: 2.0 * s * weighted,
                mass: kernel.mass()[idx],
                neg_f_max: f
                    .values()
                    .iter()
                    .map(|v| -v)
                    .fold(f64::NEG_INFINITY, f64::max),
                sup_rm: state.curvature()?.sup_rm,
                metric_defect,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let profile = curvature_profile(&trace, x0, PROFILE_TIME)?;
    Ok(BlowdownLevel {
        k,
        tau,
        trace,
        kernel,
        records,
        profile,
    })
}

/// Builds every level of the blow-down (levels are solved concurrently).
pub fn build_sequence(
    base: &BaseFlow,
    x0: Point,
    config: &BlowdownConfig,
) -> Result<BlowdownSequence> {
    config.validate()?;
    let taus = config.taus();
    let levels = taus
        .par_iter()
        .enumerate()
        .map(|(k, &tau)| build_level(base, x0, config, k, tau))
        .collect::<Result<Vec<_>>>()?;
    let mut flags = Vec::new();
    if let Some(trace) = base.base_trace() {
        if crate::flow::negative_curvature(trace) {
            flags.push("R<0 detected".to_string());
        }
        // Balls at the blow-down scales.
        let samples = taus
            .iter()
            .filter(|&&tau| trace.covers(config.t_offset + tau, config.t_offset + tau))
            .map(|&tau| (x0, tau.sqrt(), config.t_offset + tau))
            .collect::<Vec<_>>();
        if !samples.is_empty() {
            let nc = monitor_noncollapse(trace, &SamplePlan::Explicit { samples })?;
            if nc.compact_collapse {
                flags.push("collapse at blow-down scales".to_string());
            }
        }
    } else if let BaseFlow::Exact { family, .. } = base {
        if let ExactKind::Homothety(h) = &family.kind {
            if h.k0 < 0.0 {
                flags.push("Ric<0 detected".to_string());
            }
        }
    }
    Ok(BlowdownSequence {
        anchor: x0,
        config: config.clone(),
        levels,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySequenceReport {
    pub s_values: Vec<f64>,
    /// `W_{+k}(s)`, one row per level.
    pub w_plus: Vec<Vec<f64>>,
    /// Largest decrease `W_{+k}(s) − W_{+k+1}(s)` (positive means a
    /// violation of monotonicity in `k`).
    pub worst_decrease: f64,
    pub monotone: bool,
    /// Largest `|W_{+K}(s) − W_{+K−1}(s)|` for the last level `K`.
    pub trailing_increment: f64,
    pub cauchy: bool,
    /// Last level's values as the limit estimate.
    pub limit: Vec<f64>,
    /// Largest `|W_{+k}(s)|`, for the boundedness check.
    pub sup_abs: f64,
}

pub const MONOTONE_TOLERANCE: f64 = 1e-3;
pub const CAUCHY_TOLERANCE: f64 = 1e-2;

/// `W_{+k}(s)` across levels, with the monotonicity and Cauchy checks.
pub fn entropy_sequence(seq: &BlowdownSequence) -> Result<EntropySequenceReport> {
    if seq.levels.len() < 3 {
        return Err(Error::InsufficientRange(format!(
            "{} blow-down levels; at least 3 are needed",
            seq.levels.len()
        )));
    }
    let s_values: Vec<f64> = seq.levels[0].records.iter().map(|r| r.s).collect();
    let w: Vec<Vec<f64>> = seq
        .levels
        .iter()
        .map(|l| l.records.iter().map(|r| r.w_plus).collect())
        .collect();
    let mut worst_decrease = f64::NEG_INFINITY;
    for k in 0..w.len() - 1 {
        for j in 0..s_values.len() {
            worst_decrease = worst_decrease.max(w[k][j] - w[k + 1][j]);
        }
    }
    let last = w.len() - 1;
    let trailing = (0..s_values.len())
        .map(|j| (w[last][j] - w[last - 1][j]).abs())
        .fold(0.0, f64::max);
    let sup_abs = w.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(EntropySequenceReport {
        monotone: worst_decrease <= MONOTONE_TOLERANCE,
        cauchy: trailing <= CAUCHY_TOLERANCE,
        limit: w[last].clone(),
        s_values,
        w_plus: w,
        worst_decrease,
        trailing_increment: trailing,
        sup_abs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolitonLimitReport {
    pub proxy: String,
    pub taus: Vec<f64>,
    /// `D_k(s)` per level at the entropy-window times.
    pub defect: Vec<Vec<f64>>,
    /// `D_k` at the profile time.
    pub defect_at_profile_time: Vec<f64>,
    /// `D_{k+1} ≤ D_k + 10⁻³` at the profile time for every `k`.
    pub defect_decay: bool,
    /// Profile distance between consecutive levels.
    pub profile_distance: Vec<f64>,
    /// Scalar curvature at the anchor at the profile time, per level.
    pub anchor_curvature: Vec<f64>,
    /// `sup |Rm(g_k)|` at the profile time, per level.
    pub sup_rm: Vec<f64>,
    /// Largest pointwise `|Rc + g_k/(2s)|²` at the profile time, per level.
    pub metric_defect: Vec<f64>,
    pub non_flat: bool,
    pub flags: Vec<String>,
}

/// Non-flatness threshold for `sup |Rm|` in the limit.
pub const FLATNESS_THRESHOLD: f64 = 1e-6;

pub fn soliton_limit_report(seq: &BlowdownSequence) -> Result<SolitonLimitReport> {
    fn at(l: &BlowdownLevel) -> &LevelRecord {
        l.records
            .iter()
            .min_by(|a, b| {
                (a.s - PROFILE_TIME)
                    .abs()
                    .total_cmp(&(b.s - PROFILE_TIME).abs())
            })
            .expect("records")
    }
    let defect: Vec<Vec<f64>> = seq
        .levels
        .iter()
        .map(|l| l.records.iter().map(|r| r.defect).collect())
        .collect();
    let d2: Vec<f64> = seq.levels.iter().map(|l| at(l).defect).collect();
    let sup_rm: Vec<f64> = seq.levels.iter().map(|l| at(l).sup_rm).collect();
    let metric_defect: Vec<f64> = seq.levels.iter().map(|l| at(l).metric_defect).collect();
    let anchor_curvature: Vec<f64> = seq.levels.iter().map(|l| l.profile[0].1).collect();
    let profile_distance: Vec<f64> = seq
        .levels
        .windows(2)
        .map(|w| profile_distance(&w[0].profile, &w[1].profile))
        .collect();
    let tail = sup_rm.len().saturating_sub(2);
    let non_flat = sup_rm[tail..].iter().all(|v| *v > FLATNESS_THRESHOLD);
    let mut flags = seq.flags.clone();
    if !non_flat {
        flags.push("flat limit: the non-flat hypothesis is not met".to_string());
    }
    Ok(SolitonLimitReport {
        proxy: "curvature-versus-distance profiles at the anchor (Cheeger–Gromov proxy)".into(),
        taus: seq.levels.iter().map(|l| l.tau).collect(),
        defect_decay: d2.windows(2).all(|w| w[1] <= w[0] + MONOTONE_TOLERANCE),
        defect,
        defect_at_profile_time: d2,
        profile_distance,
        anchor_curvature,
        sup_rm,
        metric_defect,
        non_flat,
        flags,
    })
}

#[cfg(test)]
mod tests;
