//! Named initial metrics shared by the scenario runner, the benches and the
//! acceptance suite.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::flow::ExactFamily;
use crate::geometry::MetricState;
use crate::grid::GridSpec;
use crate::soliton::{einstein_homothety_family, solve_expander_profile};

/// Catalog entry.
#[derive(Debug, Clone, Serialize)]
pub struct FixtureInfo {
    pub name: &'static str,
    pub backend: &'static str,
    pub description: &'static str,
    /// Parameters with their defaults.
    pub params: &'static [(&'static str, f64)],
}

pub const CATALOG: &[FixtureInfo] = &[
    FixtureInfo {
        name: "flat-plane",
        backend: "conformal-radial",
        description: "static Euclidean plane",
        params: &[("n", 513.0), ("extent", 12.0)],
    },
    FixtureInfo {
        name: "flat-torus",
        backend: "conformal-torus",
        description: "static flat square torus",
        params: &[("n", 64.0), ("extent", 1.0)],
    },
    FixtureInfo {
        name: "cone",
        backend: "conformal-radial",
        description: "e^{2φ} = (1 + r²)^{−β}: positive curvature, asymptotically conical, type III",
        params: &[("n", 257.0), ("extent", 16.0), ("beta", 0.45)],
    },
    FixtureInfo {
        name: "cigar",
        backend: "conformal-radial",
        description: "Hamilton's cigar e^{2φ} = 1/(1 + r²): a steady soliton, curvature does not decay",
        params: &[("n", 257.0), ("extent", 16.0)],
    },
    FixtureInfo {
        name: "torus-bump",
        backend: "conformal-torus",
        description: "φ = a sin(2πx/L) cos(2πy/L) on a square torus",
        params: &[("n", 64.0), ("extent", 1.0), ("amplitude", 0.1)],
    },
    FixtureInfo {
        name: "expander",
        backend: "conformal-radial",
        description: "rotationally symmetric gradient expander with curvature r0 at the origin; the state is stamped t = sigma",
        params: &[("n", 257.0), ("extent", 16.0), ("r0", 1.0), ("sigma", 1.0)],
    },
    FixtureInfo {
        name: "hyperbolic",
        backend: "einstein-homothety",
        description: "expanding hyperbolic homothety c(t) = c0 + 2(n−1)t; grid n = 0 means homogeneous",
        params: &[("dim", 2.0), ("c0", 1.0), ("n", 257.0), ("extent", 30.0)],
    },
    FixtureInfo {
        name: "sphere",
        backend: "einstein-homothety",
        description: "shrinking round sphere, singular at c0/(2(n−1))",
        params: &[("dim", 2.0), ("c0", 1.0)],
    },
    FixtureInfo {
        name: "flat-t2xt2",
        backend: "flat-product",
        description: "flat square torus times a flat square 2-torus",
        params: &[("n", 32.0), ("extent", 1.0), ("extra_extent", 1.0)],
    },
];

pub fn info(name: &str) -> Option<&'static FixtureInfo> {
    CATALOG.iter().find(|f| f.name == name)
}

/// A built fixture: its initial state and, when known, the exact flow (on
/// the same clock as the state's time stamp).
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub state: MetricState,
    pub exact: Option<ExactFamily>,
    /// Soliton potential at the initial time, for expander fixtures.
    pub potential: Option<ScalarField>,
}

/// Builds a catalog fixture. Unknown parameter names are errors; missing
/// ones take the catalog default.
pub fn build(name: &str, params: &BTreeMap<String, f64>) -> Result<Fixture> {
    let entry =
        info(name).ok_or_else(|| Error::InvalidArgument(format!("unknown fixture {name:?}")))?;
    if let Some(key) = params
        .keys()
        .find(|k| !entry.params.iter().any(|(p, _)| p == k))
    {
        return Err(Error::InvalidArgument(format!(
            "fixture {name:?} has no parameter {key:?}"
        )));
    }
    let get = |key: &str| -> f64 {
        params.get(key).copied().unwrap_or_else(|| {
            entry
                .params
                .iter()
                .find(|(p, _)| *p == key)
                .map(|p| p.1)
                .unwrap_or(f64::NAN)
        })
    };
    let count = |key: &str| -> Result<usize> {
        let v = get(key);
        if v >= 0.0 && v.fract() == 0.0 && v < 1e7 {
            Ok(v as usize)
        } else {
            Err(Error::InvalidArgument(format!(
                "{key} = {v} must be a nonnegative integer"
            )))
        }
    };
    let radial = || -> Result<GridSpec> { GridSpec::radial(count("n")?, get("extent")) };
    let periodic = || -> Result<GridSpec> { GridSpec::periodic(count("n")?, get("extent")) };
    let conformal_radial = |phi: &dyn Fn(f64) -> f64| -> Result<MetricState> {
        MetricState::conformal_radial(ScalarField::from_fn(radial()?, |p| phi(p[0]))?, 0.0)
    };
    let plain = |state: MetricState| Fixture {
        name: name.to_string(),
        state,
        exact: None,
        potential: None,
    };
    Ok(match name {
        "flat-plane" => plain(conformal_radial(&|_| 0.0)?),
        "flat-torus" => plain(MetricState::conformal_torus(
            ScalarField::constant(periodic()?, 0.0),
            0.0,
        )?),
        "cone" => {
            let beta = get("beta");
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "beta = {beta} must lie in (0, 1)"
                )));
            }
            plain(conformal_radial(&|r| -0.5 * beta * (1.0 + r * r).ln())?)
        }
        "cigar" => plain(conformal_radial(&|r| -0.5 * (1.0 + r * r).ln())?),
        "torus-bump" => {
            let (a, l) = (get("amplitude"), get("extent"));
            let phi = ScalarField::from_fn(periodic()?, |[x, y]| {
                a * (TAU * x / l).sin() * (TAU * y / l).cos()
            })?;
            plain(MetricState::conformal_torus(phi, 0.0)?)
        }
        "expander" => {
            // The state sits at time sigma of its self-similar flow, which is
            // born from the asymptotic cone at t = 0.
            let fx = solve_expander_profile(get("r0"), get("sigma"), radial()?)?;
            Fixture {
                name: name.into(),
                state: fx.state,
                exact: Some(ExactFamily::expander(fx.profile)),
                potential: Some(fx.potential),
            }
        }
        "hyperbolic" | "sphere" => {
            let k0 = if name == "hyperbolic" { -1.0 } else { 1.0 };
            let family = einstein_homothety_family(count("dim")?, k0, get("c0"))?;
            let grid = if name == "hyperbolic" && count("n")? > 0 {
                radial()?
            } else {
                GridSpec::None
            };
            Fixture {
                name: name.into(),
                state: family.state_at(grid, 0.0)?,
                exact: Some(ExactFamily::homothety(family)),
                potential: None,
            }
        }
        "flat-t2xt2" => {
            let base = MetricState::conformal_torus(ScalarField::constant(periodic()?, 0.0), 0.0)?;
            plain(MetricState::flat_product(base, 2, get("extra_extent"))?)
        }
        _ => unreachable!("catalog entry without a builder"),
    })
}
