//! The expander entropy
//!
//! ```text
//! W+(g, f, σ) = ∫ [σ(|∇f|² + R) − f + n] u dv,   u = (4πσ)^{−n/2} e^{−f},
//! ```
//!
//! its time derivative along a conjugate kernel, and the soliton defect
//! tensor `Rc + Hess f + g/(2σ)`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundReport;
use crate::error::{Error, Result};
use crate::field::{ScalarField, SymTensorField};
use crate::geometry::MetricState;
use crate::heat::{Direction, KernelSolution};

/// Tolerance on `∫u dv = 1` accepted by [`compute_wplus`].
pub const MASS_TOLERANCE: f64 = 1e-3;

/// Which gradient enters the entropy integrand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientForm {
    /// `σ|∇f|²`.
    #[default]
    Potential,
    /// `σ|∇u|²`, kept for comparison only.
    Density,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRecord {
    pub sigma: f64,
    pub w_plus: f64,
    /// `∫|Rc + Hess f + g/(2σ)|² u dv`.
    pub defect_norm_sq_integral: f64,
    pub f: ScalarField,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "σ = {sigma} must be positive"
        )))
    }
}

/// `f = −log u − (n/2) log(4πσ)`.
pub fn f_from_u(state: &MetricState, u: &ScalarField, sigma: f64) -> Result<ScalarField> {
    check_sigma(sigma)?;
    if let Some((i, &v)) = u.values().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositive { index: i, value: v });
    }
    let shift = 0.5 * state.dim() as f64 * (4.0 * PI * sigma).ln();
    let f = u.map(|v| -v.ln() - shift);
    state.grid().ensure_same(f.grid())?;
    Ok(f)
}

/// `(4πσ)^{−n/2} e^{−f}`.
pub fn u_from_f(state: &MetricState, f: &ScalarField, sigma: f64) -> ScalarField {
    let c = (4.0 * PI * sigma).powf(-0.5 * state.dim() as f64);
    f.map(|v| c * (-v).exp())
}

pub fn compute_wplus(state: &MetricState, u: &ScalarField, sigma: f64) -> Result<f64> {
    compute_wplus_with(state, u, sigma, GradientForm::Potential)
}

pub fn compute_wplus_with(
    state: &MetricState,
    u: &ScalarField,
    sigma: f64,
    form: GradientForm,
) -> Result<f64> {
    let f = f_from_u(state, u, sigma)?;
    let mass = state.integrate(u)?;
    if (mass - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::MassCheck {
            mass,
            tolerance: MASS_TOLERANCE,
        });
    }
    let n = state.dim() as f64;
    let grad = match form {
        GradientForm::Potential => state.grad_norm_sq(&f)?,
        GradientForm::Density => state.grad_norm_sq(u)?,
    };
    let r = state.curvature()?.scalar;
    let integrand: Vec<f64> = (0..u.len())
        .map(|i| (sigma * (grad.values()[i] + r.values()[i]) - f.values()[i] + n) * u.values()[i])
        .collect();
    state.integrate(&ScalarField::new(*u.grid(), integrand)?)
}

/// The tensor `Rc + Hess f + g/(2σ)` (orthonormal frame).
pub fn defect_tensor(state: &MetricState, f: &ScalarField, sigma: f64) -> Result<SymTensorField> {
    check_sigma(sigma)?;
    if f.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite potential".into()));
    }
    let ric = state.curvature()?.ricci;
    let hess = state.hessian(f)?;
    let mut t = ric.add(&hess)?;
    let s = 0.5 / sigma;
    for i in 0..t.len() {
        t.a11[i] += s;
        t.a22[i] += s;
        t.extra[i] += s;
    }
    Ok(t)
}

/// `(∫|D|² u dv, ∫|D|² dv)` for the defect `D` of `f` and a density `u`.
pub fn defect_integrals(
    state: &MetricState,
    f: &ScalarField,
    u: &ScalarField,
    sigma: f64,
) -> Result<(f64, f64)> {
    let d = defect_tensor(state, f, sigma)?;
    let norm = ScalarField::from_raw(*f.grid(), d.norm_sq());
    let weighted = state.integrate(&norm.zip_with(u, |a, b| a * b)?)?;
    Ok((weighted, state.integrate(&norm)?))
}

/// The defect tensor of `f` and its integral against
/// `u = (4πσ)^{−n/2}e^{−f}`.
pub fn soliton_defect(
    state: &MetricState,
    f: &ScalarField,
    sigma: f64,
) -> Result<(SymTensorField, f64)> {
    let d = defect_tensor(state, f, sigma)?;
    let u = u_from_f(state, f, sigma);
    let norm = ScalarField::from_raw(*f.grid(), d.norm_sq());
    let integral = state.integrate(&norm.zip_with(&u, |a, b| a * b)?)?;
    Ok((d, integral))
}

pub fn entropy_record(state: &MetricState, u: &ScalarField, sigma: f64) -> Result<EntropyRecord> {
    let w_plus = compute_wplus(state, u, sigma)?;
    let f = f_from_u(state, u, sigma)?;
    let (defect, _) = defect_integrals(state, &f, u, sigma)?;
    Ok(EntropyRecord {
        sigma,
        w_plus,
        defect_norm_sq_integral: defect,
        f,
    })
}

/// One row of the entropy series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyPoint {
    pub t: f64,
    pub sigma: f64,
    pub w_plus: f64,
    /// Finite-difference `dW+/dt` (NaN at the window ends).
    pub dw_measured: f64,
    /// `∫2σ|Rc + Hess f + g/(2σ)|² u dv`.
    pub dw_predicted: f64,
    pub defect_integral: f64,
    /// `∫2σ|Rc + Hess f + g/(2σ)|² dv`, without the kernel weight.
    pub defect_unweighted: f64,
}

/// `W+` along a conjugate kernel at its stored times with `σ = t − T`,
/// measured and predicted derivatives side by side.
pub fn wplus_derivative_series(kernel: &KernelSolution, t_ref: f64) -> Result<Vec<EntropyPoint>> {
    if kernel.direction() != Direction::ConjugateFromSink {
        return Err(Error::InvalidArgument(
            "the entropy series needs a conjugate kernel".into(),
        ));
    }
    let idx: Vec<usize> = (0..kernel.times().len())
        .filter(|&k| kernel.times()[k] - t_ref > 0.0)
        .collect();
    if idx.len() < 3 {
        return Err(Error::InsufficientRange(format!(
            "{} stored times with t > T; at least 3 are needed for differencing",
            idx.len()
        )));
    }
    let mut rows: Vec<EntropyPoint> = idx
        .par_iter()
        .map(|&k| -> Result<EntropyPoint> {
            let t = kernel.times()[k];
            let sigma = t - t_ref;
            let state = kernel.trace().state_at(t)?;
            let u = &kernel.fields()[k];
            let w = compute_wplus(&state, u, sigma)?;
            let f = f_from_u(&state, u, sigma)?;
            let (weighted, unweighted) = defect_integrals(&state, &f, u, sigma)?;
            Ok(EntropyPoint {
                t,
                sigma,
                w_plus: w,
                dw_measured: f64::NAN,
                dw_predicted: 2.0 * sigma * weighted,
                defect_integral: weighted,
                defect_unweighted: 2.0 * sigma * unweighted,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for k in 1..rows.len() - 1 {
        let (a, b) = (rows[k].t - rows[k - 1].t, rows[k + 1].t - rows[k].t);
        rows[k].dw_measured = (-b / (a * (a + b))) * rows[k - 1].w_plus
            + ((b - a) / (a * b)) * rows[k].w_plus
            + (a / (b * (a + b))) * rows[k + 1].w_plus;
    }
    Ok(rows)
}

/// `dW+/dt ≥ −tolerance` at every interior stored time past the launch
/// burn-in, and measured against predicted derivative within `agreement`
/// (relative, with an absolute floor of `tolerance`).
pub fn verify_entropy_monotonicity(
    kernel: &KernelSolution,
    t_ref: f64,
    tolerance: f64,
    agreement: f64,
) -> Result<(BoundReport, Vec<EntropyPoint>)> {
    if !(tolerance > 0.0 && agreement > 0.0) {
        return Err(Error::InvalidArgument("tolerances must be positive".into()));
    }
    let rows = wplus_derivative_series(kernel, t_ref)?;
    let mut report = BoundReport::new(
        "entropy-monotonicity",
        "dW+/dt = ∫2σ|Rc + Hess f + g/(2σ)|² u dv ≥ 0",
    );
    if crate::flow::negative_curvature(kernel.trace()) {
        report.flag("R<0 detected");
    }
    let cutoff = kernel.anchor_time() - crate::bounds::BURN_IN * kernel.width().powi(2);
    let (mut worst, mut mismatch) = (f64::INFINITY, 0.0_f64);
    // The difference stencil must stay clear of the launch as well.
    let usable = rows
        .windows(2)
        .filter(|w| w[0].dw_measured.is_finite() && w[1].t <= cutoff)
        .map(|w| &w[0]);
    for r in usable {
        report.samples += 1;
        worst = worst.min(r.dw_measured);
        let rel = (r.dw_measured - r.dw_predicted).abs() / r.dw_predicted.abs().max(tolerance);
        mismatch = mismatch.max(rel);
        report.violations += usize::from(r.dw_measured < -tolerance || rel > agreement);
    }
    if report.samples == 0 {
        return Err(Error::InsufficientRange(
            "no interior stored times before the launch burn-in".into(),
        ));
    }
    report.worst_margin = worst + tolerance;
    report.fitted_constants.insert("min_dW_dt".into(), worst);
    report
        .fitted_constants
        .insert("max_relative_mismatch".into(), mismatch);
    report.finish();
    report.pass = report.violations == 0;
    Ok((report, rows))
}
