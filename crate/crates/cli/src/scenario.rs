//! Declarative scenario files (TOML) and their validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use riccilab::blowdown::BlowdownConfig;
use riccilab::fixtures;
use riccilab::flow::StepPolicy;
use riccilab::grid::Point;
use riccilab::heat::HeatOptions;
use serde::Deserialize;

pub const SCHEMA_VERSION: u32 = 1;

pub const BACKENDS: &[&str] = &[
    "conformal-torus",
    "conformal-radial",
    "einstein-homothety",
    "flat-product",
];

/// Scenarios shipped with the binary, addressable by name.
pub const BUNDLED: &[(&str, &str)] = &[
    (
        "flat-kernel-suite",
        include_str!("../scenarios/flat-kernel-suite.toml"),
    ),
    ("cone-flow", include_str!("../scenarios/cone-flow.toml")),
    (
        "hyperbolic-blowdown",
        include_str!("../scenarios/hyperbolic-blowdown.toml"),
    ),
    (
        "expander-blowdown",
        include_str!("../scenarios/expander-blowdown.toml"),
    ),
];

/// A schema violation, located by the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl SchemaError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        SchemaError {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "schema error at `{}`: {}", self.path, self.message)
    }
}

impl std::error::Error for SchemaError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub backend: Option<BackendSpec>,
    pub initial: InitialSpec,
    #[serde(default)]
    pub flow: FlowSpec,
    /// Kernel jobs keyed by name.
    #[serde(default, rename = "kernel")]
    pub kernels: BTreeMap<String, KernelJob>,
    /// Verifier jobs keyed by report name.
    #[serde(default, rename = "verifier")]
    pub verifiers: BTreeMap<String, VerifierSpec>,
    #[serde(default)]
    pub blowdown: Option<BlowdownSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Optional cross-check of the fixture's backend.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub fixture: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowMode {
    /// The exact family when the fixture has one, otherwise integrate.
    #[default]
    Auto,
    Integrate,
    Exact,
    /// Hold the initial metric fixed.
    Static,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSpec {
    pub horizon: f64,
    pub mode: FlowMode,
    pub policy: StepPolicy,
    /// Snapshot count for exact and static traces.
    pub snapshots: usize,
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec {
            horizon: 1.0,
            mode: FlowMode::Auto,
            policy: StepPolicy::default(),
            snapshots: 65,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelDirection {
    Forward,
    Conjugate,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelJob {
    pub direction: KernelDirection,
    #[serde(default)]
    pub anchor: Point,
    /// Source time (forward) or sink time (conjugate).
    pub time: f64,
    pub width: f64,
    #[serde(default)]
    pub until: Option<f64>,
    #[serde(default)]
    pub store_count: Option<usize>,
    #[serde(default)]
    pub store_times: Vec<f64>,
    #[serde(default)]
    pub safety: Option<f64>,
}

impl KernelJob {
    pub fn options(&self) -> HeatOptions {
        let d = HeatOptions::default();
        HeatOptions {
            until: self.until,
            store_count: self.store_count.unwrap_or(d.store_count),
            store_times: self.store_times.clone(),
            safety: self.safety.unwrap_or(d.safety),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VerifierSpec {
    GradientEstimate {
        kernel: String,
        window: (f64, f64),
    },
    HarnackGrowth {
        kernel: String,
        #[serde(default = "one")]
        delta: f64,
        pairs: Vec<(Point, Point, f64)>,
    },
    KernelEnvelope {
        kernel: String,
    },
    CenterF {
        kernel: String,
    },
    MassConservation {
        kernel: String,
        tolerance: f64,
    },
    EntropyMonotonicity {
        kernel: String,
        #[serde(default)]
        t_ref: f64,
        #[serde(default = "monotone_tolerance")]
        tolerance: f64,
        #[serde(default = "agreement")]
        agreement: f64,
    },
    Sobolev {
        t: f64,
        kappa: f64,
        a: f64,
        samples: usize,
    },
    DistanceDoubling {
        x: Point,
        y: Point,
        s: f64,
        t: f64,
    },
    VolumeComparability {
        x: Point,
        r: f64,
        s_prime: f64,
        t4: f64,
        t5: f64,
    },
    TypeIii {},
    NonCollapse {
        budget: usize,
        r_min: f64,
        r_max: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn monotone_tolerance() -> f64 {
    1e-3
}

fn agreement() -> f64 {
    0.05
}

impl VerifierSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            VerifierSpec::GradientEstimate { .. } => "gradient-estimate",
            VerifierSpec::HarnackGrowth { .. } => "harnack-growth",
            VerifierSpec::KernelEnvelope { .. } => "kernel-envelope",
            VerifierSpec::CenterF { .. } => "center-f",
            VerifierSpec::MassConservation { .. } => "mass-conservation",
            VerifierSpec::EntropyMonotonicity { .. } => "entropy-monotonicity",
            VerifierSpec::Sobolev { .. } => "sobolev",
            VerifierSpec::DistanceDoubling { .. } => "distance-doubling",
            VerifierSpec::VolumeComparability { .. } => "volume-comparability",
            VerifierSpec::TypeIii {} => "type-iii",
            VerifierSpec::NonCollapse { .. } => "non-collapse",
        }
    }

    /// Kernels this verifier reads.
    pub fn kernels(&self) -> Vec<&str> {
        match self {
            VerifierSpec::GradientEstimate { kernel, .. }
            | VerifierSpec::KernelEnvelope { kernel }
            | VerifierSpec::CenterF { kernel }
            | VerifierSpec::MassConservation { kernel, .. }
            | VerifierSpec::EntropyMonotonicity { kernel, .. }
            | VerifierSpec::HarnackGrowth { kernel, .. } => vec![kernel],
            _ => Vec::new(),
        }
    }

    fn tolerances(&self) -> Vec<(&'static str, f64)> {
        match self {
            VerifierSpec::MassConservation { tolerance, .. } => vec![("tolerance", *tolerance)],
            VerifierSpec::EntropyMonotonicity {
                tolerance,
                agreement,
                ..
            } => {
                vec![("tolerance", *tolerance), ("agreement", *agreement)]
            }
            VerifierSpec::HarnackGrowth { delta, .. } => vec![("delta", *delta)],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlowdownBase {
    #[default]
    Auto,
    Trace,
    Exact,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlowdownSpec {
    #[serde(default)]
    pub base: BlowdownBase,
    #[serde(default)]
    pub anchor: Point,
    /// Defaults to `horizon/96` for trace bases and 1 otherwise.
    #[serde(default)]
    pub tau0: Option<f64>,
    #[serde(default)]
    pub ratio: Option<f64>,
    #[serde(default)]
    pub levels: Option<usize>,
    #[serde(default)]
    pub t_offset: Option<f64>,
    #[serde(default)]
    pub width: Option<f64>,
    #[serde(default)]
    pub s_samples: Option<usize>,
}

impl BlowdownSpec {
    pub fn config(&self, horizon: f64, trace_base: bool) -> BlowdownConfig {
        let mut c = if trace_base {
            BlowdownConfig::for_horizon(horizon)
        } else {
            BlowdownConfig::default()
        };
        if let Some(v) = self.tau0 {
            c.tau0 = v;
        }
        if let Some(v) = self.ratio {
            c.ratio = v;
        }
        if let Some(v) = self.levels {
            c.levels = v;
        }
        if let Some(v) = self.t_offset {
            c.t_offset = v;
        }
        if let Some(v) = self.width {
            c.width = v;
        }
        if let Some(v) = self.s_samples {
            c.s_samples = v;
        }
        c
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Persist the flow trace (snapshots and manifest).
    pub trace: bool,
    /// Persist kernel fields.
    pub kernels: bool,
}

/// Parses and validates scenario text.
pub fn parse(text: &str) -> Result<Scenario, SchemaError> {
    let value: toml::Table =
        toml::from_str(text).map_err(|e| SchemaError::at("<document>", e.message().to_string()))?;
    match value.get("schema_version") {
        None => return Err(SchemaError::at("schema_version", "missing")),
        Some(toml::Value::Integer(v)) if *v == SCHEMA_VERSION as i64 => {}
        Some(v) => {
            return Err(SchemaError::at(
                "schema_version",
                format!("unsupported version {v}; this build reads version {SCHEMA_VERSION}"),
            ))
        }
    }
    let scenario: Scenario =
        serde_path_to_error::deserialize(toml::Value::Table(value)).map_err(|e| {
            let path = e.path().to_string();
            SchemaError::at(
                if path == "." {
                    "<document>".into()
                } else {
                    path
                },
                e.into_inner().message().trim().to_string(),
            )
        })?;
    validate(&scenario)?;
    Ok(scenario)
}

pub fn load(path: &Path) -> Result<(Scenario, String), LoadError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            let name = path.to_string_lossy();
            match BUNDLED.iter().find(|(n, _)| *n == name) {
                Some((_, t)) if !path.exists() => t.to_string(),
                _ => return Err(LoadError::Io(path.to_path_buf(), e)),
            }
        }
    };
    let scenario = parse(&text).map_err(LoadError::Schema)?;
    Ok((scenario, text))
}

#[derive(Debug)]
pub enum LoadError {
    Io(PathBuf, std::io::Error),
    Schema(SchemaError),
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Io(p, e) => write!(f, "cannot read {}: {e}", p.display()),
            LoadError::Schema(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for LoadError {}

fn positive(path: String, v: f64) -> Result<(), SchemaError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(SchemaError::at(path, format!("must be positive, got {v}")))
    }
}

/// Names become file names, so they are kept to a safe alphabet.
fn check_key(path: &str, name: &str) -> Result<(), SchemaError> {
    if !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        Ok(())
    } else {
        Err(SchemaError::at(
            path,
            "use letters, digits, '-' and '_' only",
        ))
    }
}

fn validate(s: &Scenario) -> Result<(), SchemaError> {
    check_key("name", &s.name)?;
    let fixture = fixtures::info(&s.initial.fixture).ok_or_else(|| {
        let known: Vec<&str> = fixtures::CATALOG.iter().map(|f| f.name).collect();
        SchemaError::at(
            "initial.fixture",
            format!(
                "unknown fixture {:?}; known: {}",
                s.initial.fixture,
                known.join(", ")
            ),
        )
    })?;
    if let Some(key) = s
        .initial
        .params
        .keys()
        .find(|k| !fixture.params.iter().any(|(p, _)| p == k))
    {
        let known: Vec<&str> = fixture.params.iter().map(|p| p.0).collect();
        return Err(SchemaError::at(
            format!("initial.params.{key}"),
            format!("fixture {:?} takes {}", fixture.name, known.join(", ")),
        ));
    }
    if let Some(b) = &s.backend {
        if !BACKENDS.contains(&b.kind.as_str()) {
            return Err(SchemaError::at(
                "backend.kind",
                format!(
                    "unknown backend {:?}; known: {}",
                    b.kind,
                    BACKENDS.join(", ")
                ),
            ));
        }
        if b.kind != fixture.backend {
            return Err(SchemaError::at(
                "backend.kind",
                format!(
                    "fixture {:?} lives on the {} backend, not {}",
                    fixture.name, fixture.backend, b.kind
                ),
            ));
        }
    }
    positive("flow.horizon".into(), s.flow.horizon)?;
    s.flow
        .policy
        .validate()
        .map_err(|e| SchemaError::at("flow.policy", e.to_string()))?;
    if s.flow.snapshots < 2 {
        return Err(SchemaError::at("flow.snapshots", "need at least 2"));
    }
    for (name, k) in &s.kernels {
        check_key(&format!("kernel.{name}"), name)?;
        positive(format!("kernel.{name}.width"), k.width)?;
        if let Some(v) = k.safety {
            positive(format!("kernel.{name}.safety"), v)?;
        }
    }
    for (name, v) in &s.verifiers {
        check_key(&format!("verifier.{name}"), name)?;
        for k in v.kernels() {
            if !s.kernels.contains_key(k) {
                return Err(SchemaError::at(
                    format!("verifier.{name}.kernel"),
                    format!("no kernel named {k:?}"),
                ));
            }
        }
        for (field, tol) in v.tolerances() {
            positive(format!("verifier.{name}.{field}"), tol)?;
        }
    }
    if let Some(b) = &s.blowdown {
        for r in ["blowdown-entropy", "soliton-limit"] {
            if s.verifiers.contains_key(r) {
                return Err(SchemaError::at(
                    "blowdown",
                    format!("report name {r:?} is reserved"),
                ));
            }
        }
        b.config(s.flow.horizon, true)
            .validate()
            .map_err(|e| SchemaError::at("blowdown", e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema_version = 1\nname = \"t\"\n[initial]\nfixture = \"flat-plane\"\n";
    const KERNEL: &str = "[kernel.k]\ndirection = \"forward\"\ntime = 0.0\nwidth = 0.1\n";

    #[test]
    fn minimal_scenario_parses() {
        let s = parse(MINIMAL).unwrap();
        assert_eq!(s.flow.horizon, 1.0);
        assert!(s.kernels.is_empty());
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            ("schema_version = 2\nname = \"t\"\n[initial]\nfixture = \"flat-plane\"\n", "schema_version"),
            (&format!("{MINIMAL}[backend]\nkind = \"spectral\"\n"), "backend.kind"),
            (&format!("{MINIMAL}[flow]\nhorizon = -1.0\n"), "flow.horizon"),
            (&format!("{MINIMAL}[flow]\nhorizn = 1.0\n"), "flow.horizn"),
            (&MINIMAL.replace("flat-plane", "bryant"), "initial.fixture"),
            (&format!("{MINIMAL}[initial.params]\nbeta = 0.3\n"), "initial.params.beta"),
            (&format!("{MINIMAL}[verifier.c]\nkind = \"center-f\"\nkernel = \"k\"\n"), "verifier.c.kernel"),
            (
                &format!("{MINIMAL}{KERNEL}[verifier.m]\nkind = \"mass-conservation\"\nkernel = \"k\"\ntolerance = 0.0\n"),
                "verifier.m.tolerance",
            ),
            (&format!("{MINIMAL}{}", KERNEL.replace("forward", "sideways")), "kernel.k.direction"),
            (&format!("{MINIMAL}[verifier.x]\nkind = \"telepathy\"\n"), "verifier.x.kind"),
            (&format!("{MINIMAL}{KERNEL}[verifier.e]\nkind = \"kernel-envelope\"\nkernel = \"k\"\nwindow = 3\n"), "verifier.e"),
        ];
        for (text, path) in cases {
            let e = parse(text).unwrap_err();
            assert_eq!(e.path, path, "{e}");
            assert!(e.to_string().contains(path));
        }
    }

    #[test]
    fn bundled_scenarios_are_valid() {
        for (name, text) in BUNDLED {
            let s = parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&s.name, name);
        }
    }
}
