//! Geodesic distances and ball volumes.
//!
//! Radial backends measure along rays with a 1D quadrature of `e^φ`. Other
//! point pairs use shortest paths on a grid graph (periodic square or polar
//! mesh) with edge weights `e^{(φ_i+φ_j)/2} · length`. The graph distance is an
//! upper bound of the true distance; its angular stencil keeps the excess
//! below about one percent on smooth metrics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::radial::{space_form_ball_volume, unit_ball_volume};
use super::{Backend, MetricState};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::{GridSpec, Point};

const TORUS_STENCIL_RADIUS: i64 = 5;
const POLAR_STENCIL_RADIUS: i64 = 3;
const POLAR_ANGLES: usize = 256;

#[derive(Copy, Clone, PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn primitive_offsets(radius: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for a in -radius..=radius {
        for b in -radius..=radius {
            if (a, b) != (0, 0) && gcd(a, b) == 1 {
                out.push((a, b));
            }
        }
    }
    out
}

/// Single-source shortest paths; stops early once `target` is settled.
fn dijkstra(
    nodes: usize,
    source: usize,
    target: Option<usize>,
    mut neighbors: impl FnMut(usize, &mut Vec<(usize, f64)>),
) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; nodes];
    let mut done = vec![false; nodes];
    let mut heap = BinaryHeap::new();
    let mut buf = Vec::new();
    dist[source] = 0.0;
    heap.push(Item(0.0, source));
    while let Some(Item(d, u)) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        if Some(u) == target {
            break;
        }
        buf.clear();
        neighbors(u, &mut buf);
        for &(v, w) in &buf {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Item(nd, v));
            }
        }
    }
    dist
}

fn torus_distances(state: &MetricState, source: usize, target: Option<usize>) -> Vec<f64> {
    let grid = state.grid();
    let n = grid.resolution() as i64;
    let h = grid.spacing();
    let ephi: Vec<f64> = state
        .phi()
        .expect("torus")
        .iter()
        .map(|p| p.exp())
        .collect();
    let offsets: Vec<(i64, i64, f64)> = primitive_offsets(TORUS_STENCIL_RADIUS)
        .into_iter()
        .map(|(a, b)| (a, b, h * ((a * a + b * b) as f64).sqrt()))
        .collect();
    dijkstra(grid.len(), source, target, |u, out| {
        let (i, j) = ((u as i64) % n, (u as i64) / n);
        for &(a, b, len) in &offsets {
            let v = ((j + b).rem_euclid(n) * n + (i + a).rem_euclid(n)) as usize;
            out.push((v, len * (ephi[u] * ephi[v]).sqrt()));
        }
    })
}

/// Polar mesh for off-axis pairs on radial backends: node 0 is the origin,
/// node `1 + (i-1)·A + j` sits at radius `r_i`, angle `2πj/A`.
struct PolarMesh {
    n: usize,
    h: f64,
    ephi: Vec<f64>,
    /// Ray distance from the origin to each radial sample.
    ray: Vec<f64>,
}

impl PolarMesh {
    fn new(state: &MetricState) -> Self {
        let grid = state.grid();
        let ephi: Vec<f64> = state
            .phi()
            .expect("radial")
            .iter()
            .map(|p| p.exp())
            .collect();
        PolarMesh {
            n: grid.resolution(),
            h: grid.spacing(),
            ray: ray_distance(&ephi, grid.spacing()),
            ephi,
        }
    }

    fn nodes(&self) -> usize {
        1 + (self.n - 1) * POLAR_ANGLES
    }

    fn node(&self, p: Point) -> usize {
        let r = p[0].hypot(p[1]);
        let i = ((r / self.h).round() as usize).min(self.n - 1);
        if i == 0 {
            return 0;
        }
        let theta = p[1].atan2(p[0]).rem_euclid(std::f64::consts::TAU);
        let j =
            (theta / (std::f64::consts::TAU / POLAR_ANGLES as f64)).round() as usize % POLAR_ANGLES;
        1 + (i - 1) * POLAR_ANGLES + j
    }

    fn radial_index(&self, node: usize) -> usize {
        if node == 0 {
            0
        } else {
            1 + (node - 1) / POLAR_ANGLES
        }
    }

    fn distances(&self, source: usize, target: Option<usize>) -> Vec<f64> {
        let offsets = primitive_offsets(POLAR_STENCIL_RADIUS);
        let a = POLAR_ANGLES as i64;
        let dtheta = std::f64::consts::TAU / POLAR_ANGLES as f64;
        dijkstra(self.nodes(), source, target, |u, out| {
            if u == 0 {
                for j in 0..POLAR_ANGLES {
                    out.push((1 + j, self.ray[1]));
                }
                return;
            }
            let i = 1 + (u - 1) / POLAR_ANGLES;
            let j = ((u - 1) % POLAR_ANGLES) as i64;
            if i == 1 {
                out.push((0, self.ray[1]));
            }
            for &(da, db) in &offsets {
                let ii = i as i64 + da;
                if ii < 1 || ii >= self.n as i64 {
                    continue;
                }
                let ii = ii as usize;
                let jj = (j + db).rem_euclid(a) as usize;
                let rm = 0.5 * (i + ii) as f64 * self.h;
                let len = ((da as f64 * self.h).powi(2) + (rm * db as f64 * dtheta).powi(2)).sqrt();
                out.push((
                    1 + (ii - 1) * POLAR_ANGLES + jj,
                    len * (self.ephi[i] * self.ephi[ii]).sqrt(),
                ));
            }
        })
    }
}

/// Cumulative trapezoid of `e^φ` along a ray.
fn ray_distance(ephi: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(ephi.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in ephi.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

fn interp(xs_step: f64, ys: &[f64], x: f64) -> f64 {
    let t = x / xs_step;
    let i = (t.floor() as usize).min(ys.len() - 2);
    let f = t - i as f64;
    ys[i] * (1.0 - f) + ys[i + 1] * f
}

fn ray_distance_at(state: &MetricState, r: f64) -> f64 {
    let grid = state.grid();
    let ephi: Vec<f64> = state
        .phi()
        .expect("radial")
        .iter()
        .map(|p| p.exp())
        .collect();
    interp(grid.spacing(), &ray_distance(&ephi, grid.spacing()), r)
}

fn space_form_distance(k: f64, p: Point, q: Point) -> f64 {
    let (r1, r2) = (p[0].hypot(p[1]), q[0].hypot(q[1]));
    if r1 == 0.0 || r2 == 0.0 {
        return r1.max(r2);
    }
    let cos = ((p[0] * q[0] + p[1] * q[1]) / (r1 * r2)).clamp(-1.0, 1.0);
    if k < 0.0 {
        let s = (-k).sqrt();
        let v = (s * r1).cosh() * (s * r2).cosh() - (s * r1).sinh() * (s * r2).sinh() * cos;
        v.max(1.0).acosh() / s
    } else if k > 0.0 {
        let s = k.sqrt();
        let v = (s * r1).cos() * (s * r2).cos() + (s * r1).sin() * (s * r2).sin() * cos;
        v.clamp(-1.0, 1.0).acos() / s
    } else {
        (p[0] - q[0]).hypot(p[1] - q[1])
    }
}

fn base_state(state: &MetricState) -> MetricState {
    match state.backend() {
        Backend::FlatProduct { base, .. } => {
            MetricState::new((**base).clone(), state.time()).expect("valid base")
        }
        _ => state.clone(),
    }
}

fn check_point(state: &MetricState, p: Point) -> Result<()> {
    if !(p[0].is_finite() && p[1].is_finite()) {
        return Err(Error::OutsideDomain { x: p[0], y: p[1] });
    }
    let grid = state.grid();
    if let GridSpec::Radial { extent, .. } = grid {
        if p[0].hypot(p[1]) > extent * (1.0 + 1e-12) {
            return Err(Error::OutsideDomain { x: p[0], y: p[1] });
        }
    }
    if let Backend::EinsteinHomothety { k0, .. } = state.backend() {
        if *k0 > 0.0 && p[0].hypot(p[1]) > std::f64::consts::PI / k0.sqrt() {
            return Err(Error::OutsideDomain { x: p[0], y: p[1] });
        }
    }
    Ok(())
}

fn same_ray(p: Point, q: Point) -> bool {
    let (rp, rq) = (p[0].hypot(p[1]), q[0].hypot(q[1]));
    if rp == 0.0 || rq == 0.0 {
        return true;
    }
    let cross = p[0] * q[1] - p[1] * q[0];
    let dot = p[0] * q[0] + p[1] * q[1];
    cross.abs() <= 1e-12 * rp * rq && dot > 0.0
}

pub(super) fn geodesic_distance(state: &MetricState, x: Point, y: Point) -> Result<f64> {
    check_point(state, x)?;
    check_point(state, y)?;
    match state.backend() {
        Backend::EinsteinHomothety { k0, scale, .. } => {
            Ok(scale.sqrt() * space_form_distance(*k0, x, y))
        }
        Backend::FlatProduct { .. } => geodesic_distance(&base_state(state), x, y),
        Backend::ConformalRadial { .. } => {
            if same_ray(x, y) {
                let (rx, ry) = (x[0].hypot(x[1]), y[0].hypot(y[1]));
                Ok((ray_distance_at(state, rx) - ray_distance_at(state, ry)).abs())
            } else {
                let mesh = PolarMesh::new(state);
                let (s, t) = (mesh.node(x), mesh.node(y));
                Ok(mesh.distances(s, Some(t))[t])
            }
        }
        Backend::ConformalTorus { .. } => {
            let grid = state.grid();
            let (s, t) = (grid.nearest(x)?, grid.nearest(y)?);
            Ok(torus_distances(state, s, Some(t))[t])
        }
    }
}

pub(super) fn distance_map(state: &MetricState, x: Point) -> Result<ScalarField> {
    check_point(state, x)?;
    let grid = state.grid();
    let values = match state.backend() {
        Backend::FlatProduct { .. } => {
            return distance_map(&base_state(state), x)
                .map(|f| ScalarField::from_raw(grid, f.into_values()))
        }
        Backend::EinsteinHomothety { k0, scale, .. } => (0..grid.len())
            .map(|i| scale.sqrt() * space_form_distance(*k0, x, grid.coords(i)))
            .collect(),
        Backend::ConformalTorus { .. } => torus_distances(state, grid.nearest(x)?, None),
        Backend::ConformalRadial { .. } => {
            if x[0].hypot(x[1]) != 0.0 {
                return Err(Error::Unsupported {
                    backend: "conformal-radial",
                    what: "radial distance maps from a point other than the origin".into(),
                });
            }
            let ephi: Vec<f64> = state
                .phi()
                .expect("radial")
                .iter()
                .map(|p| p.exp())
                .collect();
            ray_distance(&ephi, grid.spacing())
        }
    };
    Ok(ScalarField::from_raw(grid, values))
}

/// Volume of the ball centred at the origin of a radial backend, from the
/// cumulative volume interpolated against the ray distance at cell edges.
fn radial_origin_ball(state: &MetricState, r: f64) -> Result<f64> {
    let st = state.radial_stencil()?;
    let ephi: Vec<f64> = state
        .phi()
        .expect("radial")
        .iter()
        .map(|p| p.exp())
        .collect();
    let dens = state.volume_density();
    let h = st.h;
    // Cell edge k sits at r = (k + 1/2) h.
    let mut edge_dist = Vec::with_capacity(st.n);
    let mut edge_vol = Vec::with_capacity(st.n);
    let mut d = 0.5 * h * 0.5 * (ephi[0] + ephi[1.min(st.n - 1)]);
    let mut v = 0.0;
    for i in 0..st.n {
        v += dens[i] * st.cell[i];
        edge_dist.push(d);
        edge_vol.push(v);
        if i + 1 < st.n {
            d += 0.5 * h * (ephi[i] + ephi[i + 1]);
        }
    }
    if r <= edge_dist[0] {
        // Inside the central cell: area scales like r².
        return Ok(edge_vol[0] * (r / edge_dist[0]).powi(2));
    }
    if r >= edge_dist[st.n - 1] {
        return Ok(edge_vol[st.n - 1]);
    }
    let k = edge_dist.partition_point(|&e| e < r);
    let f = (r - edge_dist[k - 1]) / (edge_dist[k] - edge_dist[k - 1]);
    Ok(edge_vol[k - 1] + f * (edge_vol[k] - edge_vol[k - 1]))
}

pub(super) fn ball_volume(state: &MetricState, x: Point, r: f64) -> Result<f64> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ball radius {r} must be positive"
        )));
    }
    check_point(state, x)?;
    match state.backend() {
        Backend::EinsteinHomothety { dim, k0, scale, .. } => {
            Ok(scale.powf(*dim as f64 / 2.0) * space_form_ball_volume(*dim, *k0, r / scale.sqrt()))
        }
        Backend::FlatProduct {
            extra_dims,
            extra_extent,
            ..
        } => {
            let base = base_state(state);
            let dist = base_distances_with_cells(&base, x)?;
            let m = *extra_dims;
            let cap = extra_extent.powi(m as i32);
            Ok(dist
                .iter()
                .filter(|(d, _)| *d < r)
                .map(|(d, dv)| {
                    dv * (unit_ball_volume(m) * (r * r - d * d).powf(m as f64 / 2.0)).min(cap)
                })
                .sum())
        }
        Backend::ConformalRadial { .. } if x[0].hypot(x[1]) == 0.0 => radial_origin_ball(state, r),
        _ => Ok(base_distances_with_cells(state, x)?
            .iter()
            .filter(|(d, _)| *d < r)
            .map(|(_, dv)| dv)
            .sum()),
    }
}

/// `(distance from x, volume of the sample's cell)` for every sample of a 2D
/// conformal backend.
fn base_distances_with_cells(state: &MetricState, x: Point) -> Result<Vec<(f64, f64)>> {
    let dens = state.volume_density();
    let cells = state.cell_measure()?;
    match state.backend() {
        Backend::ConformalTorus { .. } => {
            let d = torus_distances(state, state.grid().nearest(x)?, None);
            Ok(d.into_iter()
                .zip(dens.iter().zip(&cells).map(|(a, b)| a * b))
                .collect())
        }
        Backend::ConformalRadial { .. } => {
            let mesh = PolarMesh::new(state);
            let d = mesh.distances(mesh.node(x), None);
            Ok(d.iter()
                .enumerate()
                .map(|(node, &dd)| {
                    let i = mesh.radial_index(node);
                    let share = if node == 0 {
                        1.0
                    } else {
                        1.0 / POLAR_ANGLES as f64
                    };
                    (dd, dens[i] * cells[i] * share)
                })
                .collect())
        }
        _ => Err(Error::Unsupported {
            backend: state.backend().name(),
            what: "graph distances".into(),
        }),
    }
}
