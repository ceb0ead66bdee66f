use std::f64::consts::{PI, TAU};

use approx::assert_relative_eq;
use proptest::prelude::*;

use super::*;
use crate::soliton::einstein_homothety_family;

fn cigar_state(n: usize, extent: f64) -> MetricState {
    let grid = GridSpec::radial(n, extent).unwrap();
    let phi = ScalarField::from_fn(grid, |p| -0.5 * (1.0 + p[0] * p[0]).ln()).unwrap();
    MetricState::conformal_radial(phi, 0.0).unwrap()
}

/// `e^{2φ} = (1 + r²)^{−β}`: positive curvature, asymptotically conical.
fn cone_state(n: usize, extent: f64, beta: f64) -> MetricState {
    let grid = GridSpec::radial(n, extent).unwrap();
    let phi = ScalarField::from_fn(grid, |p| -0.5 * beta * (1.0 + p[0] * p[0]).ln()).unwrap();
    MetricState::conformal_radial(phi, 0.0).unwrap()
}

fn bumpy_torus(n: usize, amp: f64) -> MetricState {
    let grid = GridSpec::periodic(n, 1.0).unwrap();
    let phi =
        ScalarField::from_fn(grid, |p| amp * (TAU * p[0]).sin() * (TAU * p[1]).cos()).unwrap();
    MetricState::conformal_torus(phi, 0.0).unwrap()
}

#[test]
fn flat_metrics_are_fixed_points() {
    let p = StepPolicy::default();
    let trace = run_flow(&MetricState::flat_torus(32, 1.0).unwrap(), 0.5, &p).unwrap();
    for s in trace.snapshots() {
        assert!(s.phi().unwrap().iter().all(|v| *v == 0.0));
    }
    let plane = run_flow(&MetricState::flat_plane(64, 4.0).unwrap(), 0.2, &p).unwrap();
    assert!(plane
        .snapshots()
        .last()
        .unwrap()
        .phi()
        .unwrap()
        .iter()
        .all(|v| v.abs() < 1e-14));
}

#[test]
fn hyperbolic_homothety_scale_grows_linearly() {
    let s0 = MetricState::einstein_homothety(2, -1.0, 1.0, GridSpec::None, 0.0).unwrap();
    let trace = run_flow(&s0, 3.0, &StepPolicy::default()).unwrap();
    for s in trace.snapshots() {
        assert_relative_eq!(
            s.scale().unwrap(),
            1.0 + 2.0 * s.time(),
            max_relative = 1e-12
        );
    }
    let s4 = MetricState::einstein_homothety(4, -1.0, 1.0, GridSpec::None, 0.0).unwrap();
    let t4 = run_flow(&s4, 1.0, &StepPolicy::default()).unwrap();
    assert_relative_eq!(
        t4.snapshots().last().unwrap().scale().unwrap(),
        7.0,
        max_relative = 1e-12
    );
}

#[test]
fn round_sphere_becomes_singular_near_one_half() {
    let s0 = MetricState::einstein_homothety(2, 1.0, 1.0, GridSpec::None, 0.0).unwrap();
    match run_flow(&s0, 1.0, &StepPolicy::default()) {
        Err(Error::SingularTime { time, .. }) => assert!((time - 0.5).abs() < 1e-3, "{time}"),
        other => panic!("expected a singular time, got {other:?}"),
    }
}

#[test]
fn rk4_step_is_fourth_order() {
    let s0 = bumpy_torus(32, 0.2);
    let reference = {
        let mut s = s0.clone();
        for _ in 0..64 {
            s = step_ricci(&s, 1e-4 / 64.0).unwrap();
        }
        s
    };
    let err = |steps: usize| {
        let mut s = s0.clone();
        for _ in 0..steps {
            s = step_ricci(&s, 1e-4 / steps as f64).unwrap();
        }
        s.phi()
            .unwrap()
            .iter()
            .zip(reference.phi().unwrap())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let (e1, e2) = (err(1), err(2));
    assert!(e1 > 0.0);
    let order = (e1 / e2).log2();
    assert!(order > 3.5, "observed order {order} ({e1:e}, {e2:e})");
}

#[test]
fn step_beyond_stability_bound_is_rejected() {
    let s0 = bumpy_torus(32, 0.2);
    let bound = stability_bound(&s0, 0.5).unwrap();
    assert!(matches!(
        step_ricci(&s0, 10.0 * bound),
        Err(Error::StabilityViolation { .. })
    ));
}

#[test]
fn cigar_is_steady() {
    // A steady soliton moves only by diffeomorphisms, so sup|Rm| stays 2.
    let trace = run_flow(&cigar_state(257, 16.0), 0.5, &StepPolicy::default()).unwrap();
    for m in trace.monitor() {
        assert_relative_eq!(m.sup_rm, 2.0, max_relative = 5e-3);
    }
}

#[test]
fn cone_curvature_decays() {
    let trace = run_flow(&cone_state(257, 16.0, 0.45), 1.0, &StepPolicy::default()).unwrap();
    let m = trace.monitor();
    assert!(m
        .windows(2)
        .all(|w| w[1].sup_rm <= w[0].sup_rm * (1.0 + 1e-6)));
    assert!(m.last().unwrap().sup_rm < 0.7 * m[0].sup_rm);
    assert!(fit_type3_constant(&trace).a_star.is_some());
}

#[test]
fn torus_volume_is_preserved() {
    // The Gauss-Bonnet term vanishes, so d/dt vol = −∫R dv = 0.
    let trace = run_flow(&bumpy_torus(32, 0.3), 0.05, &StepPolicy::default()).unwrap();
    let v0 = trace.monitor()[0].volume.unwrap();
    for m in trace.monitor() {
        assert_relative_eq!(m.volume.unwrap(), v0, max_relative = 1e-4);
    }
}

#[test]
fn maximum_principle_for_conformal_factor() {
    let trace = run_flow(&bumpy_torus(32, 0.3), 0.05, &StepPolicy::default()).unwrap();
    let range = |s: &MetricState| {
        let p = s.phi().unwrap();
        (
            p.iter().copied().fold(f64::INFINITY, f64::min),
            p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (lo0, hi0) = range(&trace.snapshots()[0]);
    for s in trace.snapshots() {
        let (lo, hi) = range(s);
        assert!(lo >= lo0 - 1e-12 && hi <= hi0 + 1e-12);
    }
}

#[test]
fn homothety_interpolation_is_exact() {
    let fam = einstein_homothety_family(2, -1.0, 1.0).unwrap();
    let trace = FlowTrace::from_exact(
        ExactFamily::homothety(fam),
        GridSpec::None,
        &[0.0, 1.0, 4.0],
    )
    .unwrap();
    assert_relative_eq!(
        trace.state_at(2.5).unwrap().scale().unwrap(),
        6.0,
        max_relative = 1e-14
    );
}

#[test]
fn type3_constant_for_model_cases() {
    let flat = run_flow(
        &MetricState::flat_torus(16, 1.0).unwrap(),
        1.0,
        &StepPolicy::default(),
    )
    .unwrap();
    assert_eq!(fit_type3_constant(&flat).a_star, Some(0.0));

    let fam = einstein_homothety_family(2, -1.0, 1.0).unwrap();
    let times: Vec<f64> = (0..=50).map(|k| 0.2 * k as f64).collect();
    let hyp = FlowTrace::from_exact(ExactFamily::homothety(fam), GridSpec::None, &times).unwrap();
    // |Rm| = 1/(1 + 2t) ≤ A/(A + t) exactly when A ≥ 1/2.
    assert_relative_eq!(
        fit_type3_constant(&hyp).a_star.unwrap(),
        0.5,
        max_relative = 1e-12
    );

    let sph = MetricState::einstein_homothety(2, 1.0, 1.0, GridSpec::None, 0.0).unwrap();
    let trace = FlowTrace::from_snapshots(
        vec![sph.clone(), step_ricci(&sph, 0.2).unwrap().with_time(0.2)],
        StepPolicy::default(),
    )
    .unwrap();
    let fit = fit_type3_constant(&trace);
    assert!(fit.a_star.is_none() && fit.reason.is_some());
}

#[test]
fn noncollapse_of_plane_and_collapse_of_torus() {
    let plane = FlowTrace::from_snapshots(
        vec![MetricState::flat_plane(257, 8.0).unwrap()],
        StepPolicy::default(),
    )
    .unwrap();
    let plan = SamplePlan::Explicit {
        samples: vec![([0.0, 0.0], 1.0, 0.0), ([0.0, 0.0], 3.0, 0.0)],
    };
    let r = monitor_noncollapse(&plane, &plan).unwrap();
    assert_relative_eq!(r.kappa_hat.unwrap(), PI, max_relative = 1e-2);
    assert!(!r.compact_collapse);

    let torus = FlowTrace::from_snapshots(
        vec![MetricState::flat_torus(32, 1.0).unwrap()],
        StepPolicy::default(),
    )
    .unwrap();
    let plan = SamplePlan::Explicit {
        samples: vec![([0.5, 0.5], 0.1, 0.0), ([0.5, 0.5], 2.0, 0.0)],
    };
    let r = monitor_noncollapse(&torus, &plan).unwrap();
    assert!(r.compact_collapse);
    assert!(r.kappa_hat.unwrap() < 0.3);
}

#[test]
fn random_plan_is_seeded() {
    let torus = FlowTrace::from_snapshots(
        vec![MetricState::flat_torus(16, 1.0).unwrap()],
        StepPolicy::default(),
    )
    .unwrap();
    let plan = SamplePlan::Random {
        budget: 6,
        seed: 7,
        r_min: 0.05,
        r_max: 0.2,
    };
    let a = monitor_noncollapse(&torus, &plan).unwrap();
    let b = monitor_noncollapse(&torus, &plan).unwrap();
    assert_eq!(a, b);
}

#[test]
fn distance_band_on_hyperbolic_homothety() {
    let fam = einstein_homothety_family(2, -1.0, 1.0).unwrap();
    let times: Vec<f64> = (0..=20).map(|k| 0.25 * k as f64).collect();
    let grid = GridSpec::radial(129, 2.0).unwrap();
    let trace = FlowTrace::from_exact(ExactFamily::homothety(fam), grid, &times).unwrap();
    let r = check_distance_doubling(&trace, [0.0, 0.0], [1.0, 0.0], 1.0, 4.0).unwrap();
    // Distances grow under negative curvature: outside hypothesis.
    assert!(!r.in_hypothesis);
    assert_relative_eq!(
        r.fitted_constants["ratio"],
        (3.0f64 / 9.0).sqrt(),
        max_relative = 1e-9
    );
}

#[test]
fn distance_band_on_cone() {
    let trace = run_flow(&cone_state(129, 8.0, 0.45), 1.0, &StepPolicy::default()).unwrap();
    let r = check_distance_doubling(&trace, [0.0, 0.0], [2.0, 0.0], 0.25, 1.0).unwrap();
    assert!(r.in_hypothesis, "{:?}", r.hypothesis_flags);
    assert!(r.pass, "{r:?}");
    assert!(r.fitted_constants["ratio"] >= 1.0);
}

#[test]
fn volume_band_on_cone() {
    let trace = run_flow(&cone_state(129, 8.0, 0.45), 1.0, &StepPolicy::default()).unwrap();
    let r = check_volume_comparability(&trace, [0.0, 0.0], 2.0, 0.25, 0.5, 1.0).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(r.fitted_constants["ratio"] <= 1.0);
}

#[test]
fn traces_reject_out_of_range_times() {
    let trace = run_flow(
        &MetricState::flat_torus(16, 1.0).unwrap(),
        0.1,
        &StepPolicy::default(),
    )
    .unwrap();
    assert!(matches!(
        trace.state_at(0.2),
        Err(Error::TraceExhausted { .. })
    ));
}

#[test]
fn cadence_validation() {
    let bad = StepPolicy {
        cadence: Cadence::Geometric {
            first: 0.0,
            ratio: 1.1,
            max_interval: 0.1,
        },
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// `λ g(t/λ)` is again a Ricci flow.
    #[test]
    fn flow_is_scale_equivariant(lambda in 0.5f64..2.0, amp in 0.05f64..0.3) {
        let s0 = bumpy_torus(16, amp);
        let dt = 0.25 * stability_bound(&s0, 0.25).unwrap().min(stability_bound(&s0.scaled(lambda).unwrap(), 0.25).unwrap());
        let a = step_ricci(&s0, dt).unwrap().scaled(lambda).unwrap();
        let b = step_ricci(&s0.scaled(lambda).unwrap(), lambda * dt).unwrap();
        for (x, y) in a.phi().unwrap().iter().zip(b.phi().unwrap()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn decay_constant_is_monotone(v in 0.0f64..0.99, t in 0.01f64..10.0) {
        let a = minimal_decay_constant(v, t).unwrap();
        let b = minimal_decay_constant(v, 2.0 * t).unwrap();
        prop_assert!(b >= a);
        if a > 0.0 {
            prop_assert!((a / (a + t) - v).abs() < 1e-9);
        }
    }
}
