//! Numerical verifiers for the kernel and curvature estimates of type III
//! flows. Existential constants are turned into fitted empirical constants
//! plus stability requirements.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::flow::FlowTrace;
use crate::geometry::{Backend, MetricState};
use crate::grid::{GridSpec, Point};
use crate::heat::{Direction, KernelSolution};

/// Outcome of one verifier run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    /// The inequality being checked.
    pub target: String,
    pub pass: bool,
    /// False when a hypothesis of the inequality fails on the input.
    pub in_hypothesis: bool,
    /// Smallest `RHS − LHS` over the samples.
    pub worst_margin: f64,
    pub slack: f64,
    pub fitted_constants: BTreeMap<String, f64>,
    pub hypothesis_flags: Vec<String>,
    /// Relative change of the fitted constants under refinement.
    pub resolution_stability: Option<f64>,
    pub samples: usize,
    pub violations: usize,
    pub notes: Vec<String>,
}

impl BoundReport {
    pub fn new(name: &str, target: &str) -> Self {
        BoundReport {
            name: name.into(),
            target: target.into(),
            pass: false,
            in_hypothesis: true,
            worst_margin: f64::INFINITY,
            slack: 0.0,
            fitted_constants: BTreeMap::new(),
            hypothesis_flags: Vec::new(),
            resolution_stability: None,
            samples: 0,
            violations: 0,
            notes: Vec::new(),
        }
    }

    pub fn flag(&mut self, what: &str) {
        if !self.hypothesis_flags.iter().any(|f| f == what) {
            self.hypothesis_flags.push(what.into());
        }
    }

    pub fn note(&mut self, what: String) {
        self.notes.push(what);
    }

    /// Sets `pass` from the margin and `in_hypothesis` from the flags.
    pub fn finish(&mut self) {
        self.pass = self.worst_margin.is_finite() && self.worst_margin >= -self.slack;
        self.in_hypothesis = self.hypothesis_flags.is_empty();
    }

    pub fn verdict(&self) -> &'static str {
        match (self.pass, self.in_hypothesis) {
            (true, true) => "pass",
            (false, true) => "fail",
            (true, false) => "pass (out-of-hypothesis)",
            (false, false) => "fail (out-of-hypothesis)",
        }
    }
}

/// `3 × max |second difference|` of `v` along the grid directions, the
/// default discretization slack.
pub fn discretization_slack(v: &ScalarField, mask: Option<&[bool]>) -> f64 {
    let grid = *v.grid();
    let x = v.values();
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let worst = match grid {
        GridSpec::Periodic2d { n, .. } => {
            let mut w: f64 = 0.0;
            for j in 0..n {
                for i in 0..n {
                    let k = j * n + i;
                    if !keep(k) {
                        continue;
                    }
                    let at = |a: usize, b: usize| x[(b % n) * n + (a % n)];
                    let dx = at(i + 1, j) - 2.0 * x[k] + at(i + n - 1, j);
                    let dy = at(i, j + 1) - 2.0 * x[k] + at(i, j + n - 1);
                    w = w.max(dx.abs()).max(dy.abs());
                }
            }
            w
        }
        GridSpec::Radial { n, .. } => (0..n - 1)
            .filter(|&i| keep(i))
            .map(|i| {
                let prev = if i == 0 { x[1] } else { x[i - 1] };
                (x[i + 1] - 2.0 * x[i] + prev).abs()
            })
            .fold(0.0, f64::max),
        GridSpec::None => 0.0,
    };
    3.0 * worst
}

fn negative_curvature_flag(trace: &FlowTrace, report: &mut BoundReport) {
    if crate::flow::negative_curvature(trace) {
        report.flag("R<0 detected");
    }
}

fn trust_mask(state: &MetricState, radius: f64) -> Vec<bool> {
    let grid = state.grid();
    (0..grid.len())
        .map(|i| match grid {
            GridSpec::Radial { .. } => grid.radius(i) <= radius,
            _ => true,
        })
        .collect()
}

/// Smallest `u` (relative to the window maximum) included in pointwise
/// checks; below it the samples sit in the numerically unresolved tail.
pub const RESOLVED_FRACTION: f64 = 1e-6;

/// Checks `|∇ log u| ≤ √(log(M/u)/t)` on the window `[t0, t1]`, with `t`
/// measured from `t0` and `M` the window maximum of `u`.
pub fn verify_gradient_estimate(
    kernel: &KernelSolution,
    window: (f64, f64),
) -> Result<BoundReport> {
    if kernel.direction() != Direction::ForwardFromSource {
        return Err(Error::InvalidArgument(
            "the gradient estimate applies to forward solutions".into(),
        ));
    }
    let (t0, t1) = window;
    let idx: Vec<usize> = (0..kernel.times().len())
        .filter(|&k| kernel.times()[k] > t0 + 1e-12 && kernel.times()[k] <= t1 + 1e-12)
        .collect();
    if t0 < kernel.times()[0] - 1e-12 || idx.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "window [{t0}, {t1}] lies outside the kernel's stored range [{}, {}]",
            kernel.times()[0],
            kernel.times()[kernel.times().len() - 1]
        )));
    }
    let sup = kernel
        .times()
        .iter()
        .zip(kernel.fields())
        .filter(|(t, _)| **t >= t0 - 1e-12 && **t <= t1 + 1e-12)
        .map(|(_, u)| u.max())
        .fold(kernel.field_at(t0)?.max(), f64::max);
    let mut report = BoundReport::new("gradient-estimate", "|∇log u| ≤ t^{-1/2} (log(M/u))^{1/2}");
    negative_curvature_flag(kernel.trace(), &mut report);
    report.fitted_constants.insert("M".into(), sup);

    let per_time: Vec<(f64, f64, usize, usize)> = idx
        .par_iter()
        .map(|&k| -> Result<(f64, f64, usize, usize)> {
            let t = kernel.times()[k];
            let u = &kernel.fields()[k];
            let state = kernel.trace().state_at(t)?;
            let mask = trust_mask(&state, state.trust_radius());
            let logu = u.map(f64::ln);
            let grad = state.grad_norm_sq(&logu)?;
            let resolved: Vec<bool> = (0..u.len())
                .map(|i| mask[i] && u.values()[i] >= RESOLVED_FRACTION * sup)
                .collect();
            let slack = discretization_slack(&logu, Some(&resolved));
            let mut worst = f64::INFINITY;
            let mut count = 0;
            let mut bad = 0;
            for i in 0..u.len() {
                if !resolved[i] {
                    continue;
                }
                let uv = u.values()[i];
                if uv > sup * (1.0 + 1e-12) {
                    return Err(Error::InconsistentSup {
                        value: uv,
                        bound: sup,
                    });
                }
                let lhs = grad.values()[i].sqrt();
                let rhs = ((sup / uv).ln().max(0.0) / (t - t0)).sqrt();
                let m = rhs - lhs;
                worst = worst.min(m);
                count += 1;
                if m < -slack {
                    bad += 1;
                }
            }
            Ok((worst, slack, count, bad))
        })
        .collect::<Result<Vec<_>>>()?;
    report.worst_margin = per_time.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    report.slack = per_time.iter().map(|p| p.1).fold(0.0, f64::max);
    report.samples = per_time.iter().map(|p| p.2).sum();
    report.violations = per_time.iter().map(|p| p.3).sum();
    report.finish();
    report.pass = report.violations == 0 && report.samples > 0;
    Ok(report)
}

/// Checks `u ≤ M` on an arbitrary field; the verifiers call this before using
/// `M` as a supremum.
pub fn check_sup(u: &ScalarField, sup: f64) -> Result<()> {
    match u
        .values()
        .iter()
        .copied()
        .find(|&v| v > sup * (1.0 + 1e-12))
    {
        Some(v) => Err(Error::InconsistentSup {
            value: v,
            bound: sup,
        }),
        None => Ok(()),
    }
}

/// The smallest `C2` for which `u(y) ≤ e·u(x)^{1/(1+δ)} M^{δ/(1+δ)} e^{C2 d²/t}`
/// holds on every pair, with `t` the elapsed kernel time.
pub fn harnack_constant(
    kernel: &KernelSolution,
    delta: f64,
    pairs: &[(Point, Point, f64)],
) -> Result<(f64, f64)> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "δ = {delta} must be positive"
        )));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs to check".into()));
    }
    let t_min = pairs.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let k_min = kernel.nearest_index(t_min);
    let sup = kernel.fields()[k_min..]
        .iter()
        .map(|u| u.max())
        .fold(0.0, f64::max);
    let c1 = std::f64::consts::E;
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(x, y, t)| -> Result<f64> {
            let k = kernel.nearest_index(t);
            let time = kernel.times()[k];
            let u = &kernel.fields()[k];
            check_sup(u, sup)?;
            let (ux, uy) = (u.sample(x)?, u.sample(y)?);
            let base = c1 * ux.powf(1.0 / (1.0 + delta)) * sup.powf(delta / (1.0 + delta));
            let excess = (uy / base).ln();
            let d = kernel.trace().state_at(time)?.geodesic_distance(x, y)?;
            let tau = kernel.tau(time);
            if d <= 0.0 || x == y {
                if excess > 1e-12 {
                    return Err(Error::InconsistentSup {
                        value: uy,
                        bound: base,
                    });
                }
                return Ok(0.0);
            }
            Ok((tau / (d * d) * excess).max(0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((values.into_iter().fold(0.0, f64::max), sup))
}

/// Fits `C2` with `C1 = e`; passes when `C2` is finite and, given a refined
/// kernel, changes by less than 10% under refinement.
pub fn verify_harnack_growth(
    kernel: &KernelSolution,
    delta: f64,
    pairs: &[(Point, Point, f64)],
    refined: Option<&KernelSolution>,
) -> Result<BoundReport> {
    let mut report = BoundReport::new(
        "harnack-growth",
        "u(y,t) ≤ C1 u(x,t)^{1/(1+δ)} M^{δ/(1+δ)} exp(C2 d(x,y,t)²/t)",
    );
    negative_curvature_flag(kernel.trace(), &mut report);
    let (c2, sup) = harnack_constant(kernel, delta, pairs)?;
    report
        .fitted_constants
        .insert("C1".into(), std::f64::consts::E);
    report.fitted_constants.insert("C2_hat".into(), c2);
    report.fitted_constants.insert("M".into(), sup);
    report.fitted_constants.insert("delta".into(), delta);
    report.samples = pairs.len();
    report.worst_margin = 0.0;
    report.finish();
    let mut stable = true;
    if let Some(fine) = refined {
        let (c2f, _) = harnack_constant(fine, delta, pairs)?;
        report.fitted_constants.insert("C2_hat_refined".into(), c2f);
        let change = if c2.max(c2f) == 0.0 {
            0.0
        } else {
            (c2f - c2).abs() / c2.max(c2f)
        };
        report.resolution_stability = Some(change);
        stable = change < 0.1;
    }
    report.pass = c2.is_finite() && stable;
    Ok(report)
}

/// Burn-in after the delta launch, in units of `width²`.
pub const BURN_IN: f64 = 10.0;

/// `C1_hat = sup τ^{n/2} sup_x u`, `C2_hat = inf τ^{n/2} u(x0)` over stored
/// times past the burn-in; requires a decade of `τ` and 20% stability.
pub fn verify_kernel_envelope(kernel: &KernelSolution) -> Result<BoundReport> {
    let n = kernel.dim() as f64;
    let tau_min = BURN_IN * kernel.width().powi(2);
    let rows: Vec<(f64, f64, f64)> = kernel
        .times()
        .iter()
        .zip(kernel.fields())
        .filter(|(t, _)| kernel.tau(**t) >= tau_min)
        .map(|(t, u)| -> Result<(f64, f64, f64)> {
            let tau = kernel.tau(*t);
            let w = tau.powf(n / 2.0);
            Ok((tau, w * u.max(), w * u.sample(kernel.anchor())?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = rows.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| {
        (a.min(r.0), b.max(r.0))
    });
    if rows.len() < 2 || hi < 10.0 * lo * (1.0 - 1e-9) {
        return Err(Error::InsufficientRange(format!(
            "kernel window τ ∈ [{lo:.3e}, {hi:.3e}] spans less than a decade after burn-in"
        )));
    }
    let mut report = BoundReport::new(
        "kernel-envelope",
        "C2 t^{-n/2} ≤ G(x0,0;x0,t), G(x0,0;x,t) ≤ C1 t^{-n/2}",
    );
    negative_curvature_flag(kernel.trace(), &mut report);
    let c1 = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let c1_min = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let c2 = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let c2_max = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let var = ((c1 - c1_min) / c1_min).max((c2_max - c2) / c2);
    report.fitted_constants.insert("C1_hat".into(), c1);
    report.fitted_constants.insert("C2_hat".into(), c2);
    report.fitted_constants.insert("tau_min".into(), lo);
    report.fitted_constants.insert("tau_max".into(), hi);
    report.fitted_constants.insert("variation".into(), var);
    report.samples = rows.len();
    report.worst_margin = 0.2 - var;
    report.finish();
    report.pass = report.pass && c1.is_finite() && c2 > 0.0 && c2 <= c1 * (1.0 + 1e-12);
    Ok(report)
}

/// `(1/(2√τ)) ∫_t^{t0} √(t0 − s) R(x0, s) ds` by Simpson's rule in
/// `q = √(t0 − s)`.
pub fn center_line_integral(trace: &FlowTrace, x0: Point, t: f64, t0: f64) -> Result<f64> {
    let tau = t0 - t;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "τ = {tau} must be positive"
        )));
    }
    let panels = 64;
    let qmax = tau.sqrt();
    let hq = qmax / panels as f64;
    let mut acc = 0.0;
    for i in 0..=panels {
        let q = i as f64 * hq;
        let s = t0 - q * q;
        let r = trace.state_at(s)?.curvature()?.scalar.sample(x0)?;
        let w = if i == 0 || i == panels {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * 2.0 * q * q * r;
    }
    Ok(acc * hq / 3.0 / (2.0 * qmax))
}

/// Checks `f(x0, t) ≤ (1/(2√τ)) ∫_t^{t0} √(t0 − s) R(x0, s) ds` for the
/// conjugate kernel sunk at `(x0, t0)`, `u = (4πτ)^{−n/2} e^{−f}`.
pub fn verify_center_f_bound(kernel: &KernelSolution, trace: &FlowTrace) -> Result<BoundReport> {
    if kernel.direction() != Direction::ConjugateFromSink {
        return Err(Error::InvalidArgument(
            "the center bound applies to conjugate kernels".into(),
        ));
    }
    let n = kernel.dim() as f64;
    let x0 = kernel.anchor();
    let t_sink = kernel.anchor_time();
    let tau_min = BURN_IN * kernel.width().powi(2);
    let mut report = BoundReport::new(
        "center-f-bound",
        "f(x0,t) ≤ (1/(2√(t0−t))) ∫_t^{t0} √(t0−s) R(x0,s) ds",
    );
    negative_curvature_flag(trace, &mut report);
    let idx: Vec<usize> = (0..kernel.times().len())
        .filter(|&k| kernel.tau(kernel.times()[k]) >= tau_min)
        .collect();
    if idx.is_empty() {
        return Err(Error::InsufficientRange(
            "no stored time past the burn-in".into(),
        ));
    }
    let rows: Vec<(f64, f64, f64, f64)> = idx
        .par_iter()
        .map(|&k| -> Result<(f64, f64, f64, f64)> {
            let t = kernel.times()[k];
            let tau = kernel.tau(t);
            let u = &kernel.fields()[k];
            let f = -u.sample(x0)?.ln() - 0.5 * n * (4.0 * PI * tau).ln();
            let rhs = center_line_integral(trace, x0, t, t_sink)?;
            let logu = u.map(f64::ln);
            let near: Vec<bool> = {
                let grid = *u.grid();
                let k0 = grid.nearest(x0)?;
                let s = trace.state_at(t)?;
                let d = s.geodesic_spacing()[k0];
                (0..grid.len())
                    .map(|i| match grid {
                        GridSpec::Periodic2d { .. } => {
                            let dd = grid.periodic_delta(x0, grid.coords(i));
                            dd[0].hypot(dd[1]) <= 3.0 * grid.spacing().max(d)
                        }
                        _ => grid.radius(i) <= 3.0 * grid.spacing(),
                    })
                    .collect()
            };
            let slack = discretization_slack(&logu, Some(&near));
            Ok((tau, f, rhs, slack))
        })
        .collect::<Result<Vec<_>>>()?;
    report.samples = rows.len();
    report.slack = rows.iter().map(|r| r.3).fold(0.0, f64::max);
    report.worst_margin = rows.iter().map(|r| r.2 - r.1).fold(f64::INFINITY, f64::min);
    report.violations = rows.iter().filter(|r| r.2 - r.1 < -r.3).count();
    // Lower envelope implied by the inequality, against the measured one.
    let implied = rows
        .iter()
        .map(|r| (4.0 * PI).powf(-n / 2.0) * (-r.2).exp())
        .fold(f64::INFINITY, f64::min);
    let measured = rows
        .iter()
        .map(|r| (4.0 * PI).powf(-n / 2.0) * (-r.1).exp())
        .fold(f64::INFINITY, f64::min);
    report.fitted_constants.insert("implied_C2".into(), implied);
    report
        .fitted_constants
        .insert("measured_C2".into(), measured);
    // Boundedness of f near the sink: the ten stored times closest to it.
    let near_sink = kernel
        .times()
        .iter()
        .zip(kernel.fields())
        .rev()
        .take(10)
        .map(|(t, u)| -> Result<f64> {
            Ok(-u.sample(x0)?.ln() - 0.5 * n * (4.0 * PI * kernel.tau(*t).max(1e-300)).ln())
        })
        .collect::<Result<Vec<_>>>()?;
    let near_max = near_sink.iter().map(|v| v.abs()).fold(0.0, f64::max);
    report
        .fitted_constants
        .insert("f_near_sink_max_abs".into(), near_max);
    if !near_max.is_finite() {
        report.note("f(x0, t) is unbounded as t approaches the sink".into());
    }
    report.finish();
    report.pass = report.violations == 0 && near_max.is_finite();
    Ok(report)
}

/// Sum of smooth compactly supported bumps on the 2D base of a product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpFunction {
    pub centers: Vec<Point>,
    pub radii: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

fn bump_profile(q: f64) -> (f64, f64) {
    if q >= 1.0 {
        return (0.0, 0.0);
    }
    let s = 1.0 - q * q;
    let v = (1.0 - 1.0 / s).exp();
    (v, v * (-2.0 * q / (s * s)))
}

impl BumpFunction {
    pub fn scaled(&self, lambda: f64) -> Self {
        BumpFunction {
            amplitudes: self.amplitudes.iter().map(|a| a * lambda).collect(),
            ..self.clone()
        }
    }

    /// Value and coordinate gradient at `p` (periodic displacement on tori).
    pub fn eval(&self, grid: &GridSpec, p: Point) -> (f64, [f64; 2]) {
        let mut v = 0.0;
        let mut g = [0.0, 0.0];
        for ((c, r), a) in self.centers.iter().zip(&self.radii).zip(&self.amplitudes) {
            let d = grid.periodic_delta(*c, p);
            let dist = d[0].hypot(d[1]);
            let (psi, dpsi) = bump_profile(dist / r);
            v += a * psi;
            if dist > 0.0 {
                let s = a * dpsi / (r * dist);
                g[0] += s * d[0];
                g[1] += s * d[1];
            }
        }
        (v, g)
    }
}

/// `((∫|v|^p dv)^{2/p}, ∫(|∇v|² + v²/t) dv)` with `p = 2n/(n−2)`, by the
/// midpoint rule on the base times the flat-factor volume.
pub fn sobolev_sides(state: &MetricState, t: f64, v: &BumpFunction) -> Result<(f64, f64)> {
    let (extra_dims, extra_extent) = match state.backend() {
        Backend::FlatProduct {
            extra_dims,
            extra_extent,
            ..
        } => (*extra_dims, *extra_extent),
        _ => {
            return Err(Error::Unsupported {
                backend: state.backend().name(),
                what: "Sobolev checks (product backends only)".into(),
            })
        }
    };
    let n = state.dim() as f64;
    if state.dim() < 3 {
        return Err(Error::Unsupported {
            backend: "flat-product",
            what: "the critical exponent in dimension 2".into(),
        });
    }
    let p = 2.0 * n / (n - 2.0);
    let grid = state.grid();
    let cells = state.cell_measure()?;
    let phi = state.phi().expect("product base");
    let fiber = extra_extent.powi(extra_dims as i32);
    let (mut lp, mut energy) = (0.0, 0.0);
    for i in 0..grid.len() {
        let (val, g) = v.eval(&grid, grid.coords(i));
        let dv = (2.0 * phi[i]).exp() * cells[i] * fiber;
        lp += val.abs().powf(p) * dv;
        energy += ((-2.0 * phi[i]).exp() * (g[0] * g[0] + g[1] * g[1]) + val * val / t) * dv;
    }
    Ok((lp.powf(2.0 / p), energy))
}

fn random_bump(rng: &mut ChaCha8Rng, grid: &GridSpec, radius: f64, h: f64) -> BumpFunction {
    let count = rng.gen_range(1..=3);
    let extent = grid.extent();
    let x = [rng.gen::<f64>() * extent, rng.gen::<f64>() * extent];
    let mut b = BumpFunction {
        centers: Vec::new(),
        radii: Vec::new(),
        amplitudes: Vec::new(),
    };
    let r_min = (8.0 * h).min(0.5 * radius);
    for _ in 0..count {
        let r = r_min + rng.gen::<f64>() * (radius - r_min);
        let reach = radius - r;
        let a = rng.gen::<f64>() * std::f64::consts::TAU;
        let off = reach * rng.gen::<f64>().sqrt();
        b.centers.push([x[0] + off * a.cos(), x[1] + off * a.sin()]);
        b.radii.push(r);
        b.amplitudes.push(0.2 + rng.gen::<f64>());
    }
    b
}

fn sobolev_max(state: &MetricState, t: f64, bumps: &[BumpFunction]) -> Result<f64> {
    let ratios = bumps
        .par_iter()
        .map(|b| sobolev_sides(state, t, b).map(|(l, r)| l / r))
        .collect::<Result<Vec<_>>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Empirical Sobolev constant over `samples` random bumps supported in balls
/// of radius `√t`, compared with twice as many samples.
pub fn verify_sobolev(
    state: &MetricState,
    t: f64,
    kappa: f64,
    a: f64,
    samples: usize,
    seed: u64,
) -> Result<BoundReport> {
    if !(t > 0.0) || samples == 0 {
        return Err(Error::InvalidArgument(
            "need t > 0 and at least one sample".into(),
        ));
    }
    // Surfaces unsupported backends and dimensions before sampling.
    let grid = state.grid();
    let probe = BumpFunction {
        centers: vec![[0.0, 0.0]],
        radii: vec![1.0],
        amplitudes: vec![0.0],
    };
    sobolev_sides(state, t, &probe)?;
    let h = state.geodesic_spacing().iter().copied().fold(0.0, f64::max);
    let radius = t.sqrt().min(0.5 * grid.extent());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<BumpFunction> = (0..2 * samples)
        .map(|_| random_bump(&mut rng, &grid, radius, h))
        .collect();
    let c = sobolev_max(state, t, &bumps[..samples])?;
    let c2 = sobolev_max(state, t, &bumps)?;
    let n = state.dim() as f64;
    let mut report = BoundReport::new(
        "sobolev",
        "(∫|v|^{2n/(n−2)})^{(n−2)/n} ≤ c ∫(|∇v|² + t^{-1}v²)",
    );
    if !(kappa > 0.0) {
        report.flag("kappa not positive");
    }
    let change = (c2 - c) / c;
    report.fitted_constants.insert("c_sob_hat".into(), c);
    report
        .fitted_constants
        .insert("c_sob_hat_doubled".into(), c2);
    report.fitted_constants.insert("kappa".into(), kappa);
    report.fitted_constants.insert("A".into(), a);
    if a > 0.0 && kappa > 0.0 {
        report
            .fitted_constants
            .insert("c_n_hat".into(), c * kappa.powf(2.0 / n) / (a * a));
    }
    report.resolution_stability = Some(change);
    report.samples = 2 * samples;
    report.worst_margin = 0.1 - change;
    report.finish();
    report.pass = report.pass && c.is_finite() && c > 0.0;
    Ok(report)
}
