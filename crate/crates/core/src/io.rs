//! Plain-text persistence: field snapshots, trace and kernel directories,
//! CSV series and JSON reports.
//!
//! A field snapshot is a CSV file whose first line is `# grid: <json>`; the
//! samples follow row-major, one grid row per line on tori and one sample
//! per line otherwise. Snapshots use round-trip precision; series CSVs use
//! 12 significant digits so reruns compare byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::blowdown::{BlowdownSequence, SolitonLimitReport};
use crate::entropy::EntropyPoint;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::fixtures::Fixture;
use crate::flow::{FlowTrace, MonitorRecord, StepPolicy};
use crate::geometry::{Backend, MetricState};
use crate::grid::{GridSpec, Point};
use crate::heat::{Direction, KernelSolution};

const GRID_PREFIX: &str = "# grid: ";
const MANIFEST: &str = "manifest.json";

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline. Non-finite floats become `null`.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| parse_err(path, e.to_string()))
}

/// Number formatting shared by every series file.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.12e}")
    } else {
        "nan".to_string()
    }
}

/// A CSV series: header row plus numeric and text cells.
#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|&v| fmt_num(v)).collect());
    }

    pub fn push_cells(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.render())
    }
}

pub fn write_field_csv(path: &Path, field: &ScalarField) -> Result<()> {
    let grid = serde_json::to_string(field.grid()).map_err(|e| parse_err(path, e.to_string()))?;
    let per_line = match field.grid() {
        GridSpec::Periodic2d { n, .. } => *n,
        _ => 1,
    };
    let mut out = format!("{GRID_PREFIX}{grid}\n");
    for row in field.values().chunks(per_line) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_field_csv(path: &Path) -> Result<ScalarField> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix(GRID_PREFIX))
        .ok_or_else(|| parse_err(path, "missing grid header"))?;
    let grid: GridSpec =
        serde_json::from_str(header).map_err(|e| parse_err(path, e.to_string()))?;
    grid.validate()?;
    let mut values = Vec::with_capacity(grid.len());
    for (no, line) in lines.enumerate() {
        for cell in line.split(',').filter(|c| !c.trim().is_empty()) {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(path, format!("line {}: bad number {cell:?}", no + 2)))?;
            values.push(v);
        }
    }
    ScalarField::new(grid, values).map_err(|e| parse_err(path, e.to_string()))
}

/// Moves the conformal factor out of a backend, leaving an empty vector.
fn take_phi(backend: &mut Backend) -> Option<Vec<f64>> {
    match backend {
        Backend::ConformalTorus { phi, .. } | Backend::ConformalRadial { phi, .. } => {
            Some(std::mem::take(phi))
        }
        Backend::FlatProduct { base, .. } => take_phi(base),
        Backend::EinsteinHomothety { .. } => None,
    }
}

fn put_phi(backend: &mut Backend, values: Vec<f64>) -> bool {
    match backend {
        Backend::ConformalTorus { phi, .. } | Backend::ConformalRadial { phi, .. } => {
            *phi = values;
            true
        }
        Backend::FlatProduct { base, .. } => put_phi(base, values),
        Backend::EinsteinHomothety { .. } => false,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotEntry {
    time: f64,
    /// The backend with its conformal factor moved to `file`.
    backend: Backend,
    file: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceManifest {
    kind: String,
    policy: StepPolicy,
    /// Exact-family traces are stored through their snapshots only.
    exact: bool,
    snapshots: Vec<SnapshotEntry>,
    monitor: Vec<MonitorRecord>,
}

/// Writes `dir/manifest.json` and one `snapshot_NNNN.csv` per conformal
/// snapshot.
pub fn save_trace(dir: &Path, trace: &FlowTrace) -> Result<()> {
    let mut entries = Vec::with_capacity(trace.len());
    for (k, s) in trace.snapshots().iter().enumerate() {
        let mut backend = s.backend().clone();
        let file = match take_phi(&mut backend) {
            Some(phi) => {
                let name = format!("snapshot_{k:04}.csv");
                let field = ScalarField::new(s.grid(), phi)?;
                write_field_csv(&dir.join(&name), &field)?;
                Some(name)
            }
            None => None,
        };
        entries.push(SnapshotEntry {
            time: s.time(),
            backend,
            file,
        });
    }
    let manifest = TraceManifest {
        kind: "flow-trace".into(),
        policy: *trace.policy(),
        exact: trace.exact_family().is_some(),
        snapshots: entries,
        monitor: trace.monitor().to_vec(),
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_trace(dir: &Path) -> Result<FlowTrace> {
    let path = dir.join(MANIFEST);
    let manifest: TraceManifest = read_json(&path)?;
    if manifest.kind != "flow-trace" {
        return Err(parse_err(
            &path,
            format!("expected a flow-trace manifest, found {:?}", manifest.kind),
        ));
    }
    let mut snapshots = Vec::with_capacity(manifest.snapshots.len());
    for entry in manifest.snapshots {
        let mut backend = entry.backend;
        if let Some(file) = entry.file {
            let field = read_field_csv(&dir.join(&file))?;
            if !put_phi(&mut backend, field.into_values()) {
                return Err(parse_err(
                    &path,
                    format!("{file}: backend has no conformal factor"),
                ));
            }
        }
        snapshots.push(MetricState::new(backend, entry.time)?);
    }
    FlowTrace::from_snapshots(snapshots, manifest.policy)
}

#[derive(Debug, Serialize, Deserialize)]
struct KernelManifest {
    kind: String,
    direction: Direction,
    anchor: Point,
    anchor_time: f64,
    width: f64,
    times: Vec<f64>,
    mass: Vec<f64>,
    files: Vec<String>,
}

/// Writes the stored kernel fields next to a manifest; the trace is saved
/// separately with [`save_trace`].
pub fn save_kernel(dir: &Path, kernel: &KernelSolution) -> Result<()> {
    let mut files = Vec::with_capacity(kernel.times().len());
    for (k, u) in kernel.fields().iter().enumerate() {
        let name = format!("field_{k:04}.csv");
        write_field_csv(&dir.join(&name), u)?;
        files.push(name);
    }
    let manifest = KernelManifest {
        kind: "kernel".into(),
        direction: kernel.direction(),
        anchor: kernel.anchor(),
        anchor_time: kernel.anchor_time(),
        width: kernel.width(),
        times: kernel.times().to_vec(),
        mass: kernel.mass().to_vec(),
        files,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_kernel(dir: &Path, trace: Arc<FlowTrace>) -> Result<KernelSolution> {
    let path = dir.join(MANIFEST);
    let m: KernelManifest = read_json(&path)?;
    if m.kind != "kernel" {
        return Err(parse_err(
            &path,
            format!("expected a kernel manifest, found {:?}", m.kind),
        ));
    }
    let fields = m
        .files
        .iter()
        .map(|f| read_field_csv(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    KernelSolution::from_stored(
        trace,
        m.direction,
        m.anchor,
        m.anchor_time,
        m.width,
        m.times,
        fields,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureManifest {
    kind: String,
    name: String,
    snapshot: SnapshotEntry,
    potential: Option<String>,
}

/// Writes a fixture as one snapshot plus, when present, `potential.csv`.
pub fn save_fixture(dir: &Path, fixture: &Fixture) -> Result<()> {
    let state = &fixture.state;
    let mut backend = state.backend().clone();
    let file = match take_phi(&mut backend) {
        Some(phi) => {
            write_field_csv(
                &dir.join("metric.csv"),
                &ScalarField::new(state.grid(), phi)?,
            )?;
            Some("metric.csv".to_string())
        }
        None => None,
    };
    let potential = match &fixture.potential {
        Some(f) => {
            write_field_csv(&dir.join("potential.csv"), f)?;
            Some("potential.csv".to_string())
        }
        None => None,
    };
    let manifest = FixtureManifest {
        kind: "fixture".into(),
        name: fixture.name.clone(),
        snapshot: SnapshotEntry {
            time: state.time(),
            backend,
            file,
        },
        potential,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

/// Loads a saved fixture; the exact family is not persisted.
pub fn load_fixture(dir: &Path) -> Result<Fixture> {
    let path = dir.join(MANIFEST);
    let m: FixtureManifest = read_json(&path)?;
    if m.kind != "fixture" {
        return Err(parse_err(
            &path,
            format!("expected a fixture manifest, found {:?}", m.kind),
        ));
    }
    let mut backend = m.snapshot.backend;
    if let Some(file) = m.snapshot.file {
        put_phi(&mut backend, read_field_csv(&dir.join(file))?.into_values());
    }
    let potential = m
        .potential
        .map(|f| read_field_csv(&dir.join(f)))
        .transpose()?;
    Ok(Fixture {
        name: m.name,
        state: MetricState::new(backend, m.snapshot.time)?,
        exact: None,
        potential,
    })
}

/// Columns `t,mass`.
pub fn mass_curve_csv(kernel: &KernelSolution) -> CsvTable {
    let mut table = CsvTable::new(&["t", "mass"]);
    for (t, m) in kernel.times().iter().zip(kernel.mass()) {
        table.push_numbers(&[*t, *m]);
    }
    table
}

/// Columns `t,sigma,W_plus,dW_meas,dW_pred,defect_integral`.
pub fn entropy_csv(points: &[EntropyPoint]) -> CsvTable {
    let mut table = CsvTable::new(&[
        "t",
        "sigma",
        "W_plus",
        "dW_meas",
        "dW_pred",
        "defect_integral",
    ]);
    for p in points {
        table.push_numbers(&[
            p.t,
            p.sigma,
            p.w_plus,
            p.dw_measured,
            p.dw_predicted,
            p.defect_integral,
        ]);
    }
    table
}

/// Columns `t,sup_rm,min_R,max_R,volume`.
pub fn monitor_csv(trace: &FlowTrace) -> CsvTable {
    let mut table = CsvTable::new(&["t", "sup_rm", "min_R", "max_R", "volume"]);
    for m in trace.monitor() {
        table.push_numbers(&[
            m.time,
            m.sup_rm,
            m.min_scalar,
            m.max_scalar,
            m.volume.unwrap_or(f64::NAN),
        ]);
    }
    table
}

/// Columns `k,s,W_plus,D_k,profile_dist,flags`. `profile_dist` is the
/// distance to the previous level's profile (NaN for `k = 0`); flags are
/// `;`-separated.
pub fn blowdown_csv(seq: &BlowdownSequence, limit: &SolitonLimitReport) -> CsvTable {
    let mut table = CsvTable::new(&["k", "s", "W_plus", "D_k", "profile_dist", "flags"]);
    let flags = limit.flags.join(";");
    for level in &seq.levels {
        let dist = match level.k {
            0 => f64::NAN,
            k => limit
                .profile_distance
                .get(k - 1)
                .copied()
                .unwrap_or(f64::NAN),
        };
        for r in &level.records {
            table.push_cells(vec![
                level.k.to_string(),
                fmt_num(r.s),
                fmt_num(r.w_plus),
                fmt_num(r.defect),
                fmt_num(dist),
                flags.clone(),
            ]);
        }
    }
    table
}

/// Columns `k,distance,R`, the curvature profiles of every level.
pub fn profile_csv(seq: &BlowdownSequence) -> CsvTable {
    let mut table = CsvTable::new(&["k", "distance", "R"]);
    for level in &seq.levels {
        for (d, r) in &level.profile {
            table.push_cells(vec![level.k.to_string(), fmt_num(*d), fmt_num(*r)]);
        }
    }
    table
}

/// Aligned text table: the first column left-aligned, the rest right.
pub fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        for (c, cell) in cells.iter().enumerate().take(cols) {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                let _ = write!(out, "{cell}{}", " ".repeat(pad));
            } else {
                let _ = write!(out, "  {}{cell}", " ".repeat(pad));
            }
        }
        out.push('\n');
    };
    line(
        &mut out,
        &header.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
    );
    for row in rows {
        line(&mut out, row);
    }
    out
}

/// Files directly inside `dir` with extension `ext`, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
