use approx::assert_relative_eq;

use super::*;
use crate::flow::{run_flow, StepPolicy};
use crate::geometry::MetricState;
use crate::heat::stationary_trace;
use crate::soliton::{einstein_homothety_family, ExpanderProfile};

fn config(levels: usize) -> BlowdownConfig {
    BlowdownConfig {
        tau0: 1.0,
        levels,
        width: 0.3,
        ..Default::default()
    }
}

fn homothety_base(k0: f64, n: usize, extent: f64) -> BaseFlow {
    BaseFlow::Exact {
        family: ExactFamily::homothety(einstein_homothety_family(2, k0, 1.0).unwrap()),
        grid: GridSpec::radial(n, extent).unwrap(),
    }
}

#[test]
fn flat_rescales_to_flat() {
    let s = MetricState::flat_torus(16, 1.0).unwrap();
    let trace = stationary_trace(&s, 0.0, 8.0).unwrap();
    let r = rescale_flow(&trace, 2.0, 0.0).unwrap();
    assert_eq!(r.end(), 4.0);
    for snap in r.snapshots() {
        assert_eq!(snap.curvature().unwrap().sup_rm, 0.0);
        assert!(snap
            .phi()
            .unwrap()
            .iter()
            .all(|p| (p + 0.5 * 2f64.ln()).abs() < 1e-15));
    }
}

#[test]
fn rescaling_needs_the_window() {
    let s = MetricState::flat_torus(16, 1.0).unwrap();
    let trace = stationary_trace(&s, 0.0, 3.0).unwrap();
    assert!(matches!(
        rescale_flow(&trace, 1.0, 0.0),
        Err(Error::TraceExhausted { .. })
    ));
}

#[test]
fn curvature_scales_with_tau() {
    let grid = GridSpec::radial(129, 16.0).unwrap();
    let phi = ScalarField::from_fn(grid, |p| -0.225 * (1.0 + p[0] * p[0]).ln()).unwrap();
    let trace = run_flow(
        &MetricState::conformal_radial(phi, 0.0).unwrap(),
        2.0,
        &StepPolicy::default(),
    )
    .unwrap();
    let tau = 0.5;
    let r = rescale_flow(&trace, tau, 0.0).unwrap();
    for (a, b) in r.monitor().iter().zip(trace.monitor()) {
        assert_relative_eq!(a.time, b.time / tau, max_relative = 1e-14);
        assert_relative_eq!(a.sup_rm, tau * b.sup_rm, max_relative = 1e-12);
    }
}

#[test]
fn hyperbolic_rescaling_closed_form() {
    let fam = einstein_homothety_family(2, -1.0, 1.0).unwrap();
    let times: Vec<f64> = (0..=20).map(|k| k as f64).collect();
    let trace = FlowTrace::from_exact(ExactFamily::homothety(fam), GridSpec::None, &times).unwrap();
    for tau in [1.0, 4.0] {
        let r = rescale_flow(&trace, tau, 0.0).unwrap();
        for s in [1.0, 2.0, 3.5] {
            let k = r.state_at(s).unwrap().curvature().unwrap().sup_rm;
            assert_relative_eq!(k, tau / (1.0 + 2.0 * s * tau), max_relative = 1e-12);
        }
    }
}

#[test]
fn flat_blowdown_is_scale_invariant() {
    let seq = build_sequence(&homothety_base(0.0, 257, 30.0), [0.0, 0.0], &config(3)).unwrap();
    let report = entropy_sequence(&seq).unwrap();
    assert!(report.trailing_increment < 1e-10);
    assert!(report.worst_decrease.abs() < 1e-10);
    for level in &seq.levels {
        for r in &level.records {
            assert_relative_eq!(r.mass, 1.0, epsilon = 1e-3);
            // W+ of the flat kernel of variance 6 − s at σ = s.
            let rho = 6.0 - r.s;
            let exact = 1.0 + r.s / rho + (r.s / rho).ln();
            assert_relative_eq!(r.w_plus, exact, epsilon = 5e-3);
            // The kernel-based defect does not vanish: 18n/(s(6 − s)²).
            assert_relative_eq!(r.defect, 36.0 / (r.s * rho * rho), max_relative = 2e-2);
        }
    }
    let limit = soliton_limit_report(&seq).unwrap();
    assert!(!limit.non_flat);
    assert!(limit.flags.iter().any(|f| f.contains("non-flat")));
}

#[test]
fn flat_blowdown_potential() {
    let trace = Arc::new(
        FlowTrace::from_exact(
            ExactFamily::homothety(einstein_homothety_family(2, 0.0, 1.0).unwrap()),
            GridSpec::radial(257, 30.0).unwrap(),
            &[0.0, 6.0],
        )
        .unwrap(),
    );
    let (_, potentials) = build_blowdown_kernel(&trace, [0.0, 0.0], &config(3)).unwrap();
    for (s, f) in potentials {
        let rho = 6.0 - s;
        for i in (0..52).step_by(3) {
            let r = f.grid().radius(i);
            let exact = r * r / (4.0 * rho) + (rho / s).ln();
            assert!((f.values()[i] - exact).abs() < 2e-2, "s = {s}, r = {r}");
        }
    }
}

#[test]
fn expander_blowdown_is_self_similar() {
    let profile = Arc::new(ExpanderProfile::solve(1.0, 1.0).unwrap());
    let base = BaseFlow::Exact {
        family: ExactFamily::expander(profile),
        grid: GridSpec::radial(257, 60.0).unwrap(),
    };
    let seq = build_sequence(&base, [0.0, 0.0], &config(3)).unwrap();
    let report = entropy_sequence(&seq).unwrap();
    assert!(report.trailing_increment < 1e-3);
    assert!(report.monotone);
    let limit = soliton_limit_report(&seq).unwrap();
    assert!(limit.non_flat);
    assert!(
        limit.profile_distance.iter().all(|d| *d < 1e-3),
        "{:?}",
        limit.profile_distance
    );
    for level in &seq.levels {
        for r in &level.records {
            assert_relative_eq!(r.mass, 1.0, epsilon = 1e-3);
        }
    }
}

#[test]
fn hyperbolic_metric_defect_follows_closed_form() {
    let cfg = BlowdownConfig {
        width: 0.6,
        ..config(3)
    };
    let seq = build_sequence(&homothety_base(-1.0, 257, 30.0), [0.0, 0.0], &cfg).unwrap();
    let limit = soliton_limit_report(&seq).unwrap();
    assert!(limit.flags.iter().any(|f| f == "Ric<0 detected"));
    for (k, level) in seq.levels.iter().enumerate() {
        let s = PROFILE_TIME;
        let c = 1.0 + 2.0 * s * level.tau;
        assert_relative_eq!(
            limit.metric_defect[k],
            2.0 / (2.0 * s * c).powi(2),
            max_relative = 1e-10
        );
        // Curvature approaches the Einstein expander's −1/(2s).
        assert_relative_eq!(limit.sup_rm[k], level.tau / c, max_relative = 1e-12);
    }
    assert!(limit.metric_defect.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn flat_torus_blowdown_is_flagged() {
    let s = MetricState::flat_torus(32, 1.0).unwrap();
    let trace = Arc::new(stationary_trace(&s, 0.0, 4.8).unwrap());
    let cfg = BlowdownConfig {
        tau0: 0.2,
        levels: 3,
        width: 0.4,
        ..Default::default()
    };
    let seq = build_sequence(&BaseFlow::Trace(trace), [0.5, 0.5], &cfg).unwrap();
    assert!(seq.flags.iter().any(|f| f.contains("collapse")));
    assert!(!soliton_limit_report(&seq).unwrap().non_flat);
}

#[test]
fn entropy_sequence_needs_three_levels() {
    let cfg = BlowdownConfig {
        width: 0.5,
        ..config(2)
    };
    let seq = build_sequence(&homothety_base(0.0, 129, 30.0), [0.0, 0.0], &cfg).unwrap();
    assert!(matches!(
        entropy_sequence(&seq),
        Err(Error::InsufficientRange(_))
    ));
}

#[test]
fn invalid_configurations_are_rejected() {
    let base = homothety_base(0.0, 129, 30.0);
    let bad = BlowdownConfig {
        ratio: 1.5,
        ..config(3)
    };
    assert!(build_sequence(&base, [0.0, 0.0], &bad).is_err());
    assert_relative_eq!(BlowdownConfig::for_horizon(96.0).tau0, 1.0);
}
