use std::f64::consts::{PI, TAU};

use approx::assert_relative_eq;

use super::*;
use crate::flow::run_flow;

fn plane_trace(n: usize, extent: f64, t1: f64) -> Arc<FlowTrace> {
    Arc::new(stationary_trace(&MetricState::flat_plane(n, extent).unwrap(), 0.0, t1).unwrap())
}

fn bumpy_flow(n: usize, t1: f64) -> Arc<FlowTrace> {
    bumpy_flow_with(n, t1, 0.25)
}

fn bumpy_flow_with(n: usize, t1: f64, amp: f64) -> Arc<FlowTrace> {
    let grid = GridSpec::periodic(n, 1.0).unwrap();
    let phi =
        ScalarField::from_fn(grid, |p| amp * (TAU * p[0]).sin() * (TAU * p[1]).cos()).unwrap();
    let s0 = MetricState::conformal_torus(phi, 0.0).unwrap();
    Arc::new(run_flow(&s0, t1, &StepPolicy::default()).unwrap())
}

fn heat_kernel_2d(r: f64, t: f64) -> f64 {
    (-r * r / (4.0 * t)).exp() / (4.0 * PI * t)
}

#[test]
fn flat_plane_kernel_matches_gaussian() {
    let trace = plane_trace(641, 10.0, 1.0);
    let h = trace.grid().spacing();
    let k = solve_forward_heat(&trace, [0.0, 0.0], 0.0, 3.0 * h, &HeatOptions::default()).unwrap();
    let last = k.times().len() - 1;
    assert_relative_eq!(k.times()[last], 1.0);
    let u = &k.fields()[last];
    let peak = heat_kernel_2d(0.0, 1.0);
    for i in 0..200 {
        let r = trace.grid().radius(i);
        assert!((u.values()[i] - heat_kernel_2d(r, 1.0)).abs() < 1e-2 * peak);
    }
    for m in k.mass() {
        assert_relative_eq!(*m, 1.0, epsilon = 1e-8);
    }
}

#[test]
fn narrow_width_is_rejected() {
    let trace = plane_trace(65, 4.0, 1.0);
    let h = trace.grid().spacing();
    let err = solve_forward_heat(&trace, [0.0, 0.0], 0.0, h, &HeatOptions::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn off_origin_radial_kernels_are_unsupported() {
    let trace = plane_trace(65, 4.0, 1.0);
    let err =
        solve_forward_heat(&trace, [1.0, 0.0], 0.0, 0.2, &HeatOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Unsupported { .. }));
}

#[test]
fn product_kernels_are_unsupported() {
    let base = MetricState::flat_torus(16, 1.0).unwrap();
    let prod = MetricState::flat_product(base, 1, 1.0).unwrap();
    assert!(matches!(
        delta_init(&prod, [0.5, 0.5], 0.2),
        Err(Error::Unsupported { .. })
    ));
}

#[test]
fn kernel_minimum_is_nondecreasing_on_torus() {
    let trace = bumpy_flow(32, 0.1);
    let k = solve_forward_heat(&trace, [0.5, 0.5], 0.0, 0.08, &HeatOptions::default()).unwrap();
    let mins: Vec<f64> = k.fields().iter().map(|u| u.min()).collect();
    for w in mins.windows(2) {
        assert!(w[1] >= w[0] * (1.0 - 1e-9));
    }
}

fn cone_flow(t1: f64) -> Arc<FlowTrace> {
    let grid = GridSpec::radial(257, 16.0).unwrap();
    let phi = ScalarField::from_fn(grid, |p| -0.225 * (1.0 + p[0] * p[0]).ln()).unwrap();
    let s0 = MetricState::conformal_radial(phi, 0.0).unwrap();
    Arc::new(run_flow(&s0, t1, &StepPolicy::default()).unwrap())
}

#[test]
fn forward_mass_follows_curvature_integral() {
    let trace = cone_flow(1.0);
    let opts = HeatOptions {
        store_count: 0,
        store_times: (10..=200).map(|k| 0.005 * k as f64).collect(),
        ..Default::default()
    };
    let k = solve_forward_heat(&trace, [0.0, 0.0], 0.0, 0.2, &opts).unwrap();
    assert!(k.mass().windows(2).all(|w| w[1] <= w[0]));
    // Past the launch transient.
    for (t, fd, pred) in k
        .mass_identity()
        .unwrap()
        .into_iter()
        .filter(|r| r.0 >= 0.1)
    {
        assert!(pred < 0.0);
        assert!(
            (fd - pred).abs() < 1e-3 * pred.abs().max(1.0),
            "t = {t}: {fd} vs {pred}"
        );
    }
}

#[test]
fn conjugate_kernel_conserves_mass() {
    let trace = bumpy_flow(32, 0.1);
    let k =
        solve_conjugate_kernel(&trace, [0.25, 0.5], 0.1, 0.08, &HeatOptions::default()).unwrap();
    for m in k.mass() {
        assert_relative_eq!(*m, 1.0, epsilon = 1e-4);
    }
    assert!(k.mass_identity().unwrap().iter().all(|r| r.1.abs() < 1e-6));
}

#[test]
fn conjugate_equals_forward_on_static_metric() {
    let trace =
        Arc::new(stationary_trace(&MetricState::flat_torus(32, 1.0).unwrap(), 0.0, 0.05).unwrap());
    let opts = HeatOptions {
        store_times: vec![0.0, 0.05],
        ..Default::default()
    };
    let width = 0.08;
    let fwd = solve_forward_heat(&trace, [0.5, 0.5], 0.0, width, &opts).unwrap();
    let bwd = solve_conjugate_kernel(&trace, [0.5, 0.5], 0.05, width, &opts).unwrap();
    let a = fwd.field_at(0.05).unwrap();
    let b = bwd.field_at(0.0).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() < 1e-10 * a.max());
    }
}

#[test]
fn static_kernel_is_symmetric() {
    let grid = GridSpec::periodic(32, 1.0).unwrap();
    let phi = ScalarField::from_fn(grid, |p| 0.2 * (TAU * p[0]).cos()).unwrap();
    let s = MetricState::conformal_torus(phi, 0.0).unwrap();
    let trace = Arc::new(stationary_trace(&s, 0.0, 0.05).unwrap());
    let (x, y) = ([0.25, 0.5], [0.625, 0.5]);
    let gx = solve_forward_heat(&trace, x, 0.0, 0.08, &HeatOptions::default()).unwrap();
    let gy = solve_forward_heat(&trace, y, 0.0, 0.08, &HeatOptions::default()).unwrap();
    let (a, b) = (gx.value_at(0.05, y).unwrap(), gy.value_at(0.05, x).unwrap());
    assert_relative_eq!(a, b, max_relative = 2e-2);
}

#[test]
fn forward_and_conjugate_kernels_are_reciprocal() {
    let trace = bumpy_flow_with(64, 0.1, 0.1);
    let (x, y) = ([0.25, 0.5], [0.5, 0.5]);
    let opts = HeatOptions {
        store_times: vec![0.0, 0.1],
        ..Default::default()
    };
    let fwd = solve_forward_heat(&trace, x, 0.0, 0.04, &opts).unwrap();
    let bwd = solve_conjugate_kernel(&trace, y, 0.1, 0.04, &opts).unwrap();
    let a = fwd.value_at(0.1, y).unwrap();
    let b = bwd.value_at(0.0, x).unwrap();
    assert_relative_eq!(a, b, max_relative = 2e-2);
}

#[test]
fn kernel_is_insensitive_to_width() {
    // The launch Gaussian is the exact kernel at time w²/2, so only the
    // spatial error remains.
    let trace = plane_trace(513, 8.0, 0.5);
    let h = trace.grid().spacing();
    let last = |w: f64| {
        let k = solve_forward_heat(&trace, [0.0, 0.0], 0.0, w, &HeatOptions::default()).unwrap();
        k.fields().last().unwrap().clone()
    };
    let (a, b, c) = (last(8.0 * h), last(4.0 * h), last(2.0 * h));
    let state = trace.state_at(0.5).unwrap();
    let l1 = |x: &ScalarField, y: &ScalarField| {
        state
            .integrate(&x.zip_with(y, |p, q| (p - q).abs()).unwrap())
            .unwrap()
    };
    assert!(l1(&a, &b) < 1e-3 && l1(&b, &c) < 1e-3);
    let exact = heat_kernel_2d(0.0, 0.5);
    assert!((c.values()[0] - exact).abs() < 1e-3 * exact);
}

#[test]
fn restart_matches_direct_solve() {
    let trace = plane_trace(257, 8.0, 1.0);
    let opts = HeatOptions {
        store_times: vec![0.4],
        ..Default::default()
    };
    let direct = solve_forward_heat(&trace, [0.0, 0.0], 0.0, 0.1, &opts).unwrap();
    let restarted = continue_forward(&direct, 0.4, &HeatOptions::default()).unwrap();
    let (a, b) = (
        direct.fields().last().unwrap(),
        restarted.fields().last().unwrap(),
    );
    let state = trace.state_at(1.0).unwrap();
    let l1 = state
        .integrate(&a.zip_with(b, |x, y| (x - y).abs()).unwrap())
        .unwrap();
    assert!(l1 < 1e-3, "{l1}");
}

#[test]
fn mass_verifier_on_both_directions() {
    let trace = cone_flow(1.0);
    let opts = HeatOptions {
        store_count: 0,
        store_times: (10..=200).map(|k| 0.005 * k as f64).collect(),
        ..Default::default()
    };
    let fwd = solve_forward_heat(&trace, [0.0, 0.0], 0.0, 0.2, &opts).unwrap();
    let r = verify_mass_conservation(&fwd, 1e-3).unwrap();
    assert!(r.pass, "{r:?}");
    let conj = solve_conjugate_kernel(
        &bumpy_flow(32, 0.1),
        [0.25, 0.5],
        0.1,
        0.08,
        &HeatOptions::default(),
    )
    .unwrap();
    let r = verify_mass_conservation(&conj, 1e-4).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(verify_mass_conservation(&conj, 0.0).is_err());
}
