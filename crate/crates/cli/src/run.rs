//! Scenario execution: flow, kernels, verifiers and blow-down, written to a
//! run directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.json          job list with status, rewritten as jobs finish
//! summary.json           one row per verifier report
//! scenario.toml          the scenario text as given
//! reports/<name>.json    one BoundReport per verifier
//! series/*.csv           monitor, mass, entropy and blow-down series
//! trace/, kernels/       optional persisted fields
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use log::{info, warn};
use rayon::prelude::*;
use riccilab::blowdown::{self, BaseFlow};
use riccilab::bounds::{self, BoundReport};
use riccilab::entropy::verify_entropy_monotonicity;
use riccilab::fixtures::{self, Fixture};
use riccilab::flow::{self, FlowTrace, SamplePlan};
use riccilab::heat::{self, KernelSolution};
use riccilab::io::{self, CsvTable};
use riccilab::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::scenario::{
    BlowdownBase, FlowMode, KernelDirection, Scenario, VerifierSpec, SCHEMA_VERSION,
};

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobStatus {
    Pending,
    Ok,
    Failed,
    /// A job it depends on failed.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub kind: String,
    pub status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub complete: bool,
    /// Keyed `flow`, `kernel.<name>`, `verifier.<name>`, `blowdown`.
    pub jobs: BTreeMap<String, JobRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub target: String,
    pub verdict: String,
    pub pass: bool,
    pub in_hypothesis: bool,
    pub worst_margin: f64,
    pub slack: f64,
    pub samples: usize,
    pub violations: usize,
    pub fitted_constants: BTreeMap<String, f64>,
    pub hypothesis_flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub status: Status,
    pub reports: BTreeMap<String, SummaryRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    /// Every in-hypothesis verifier passed.
    Pass,
    VerifierFailure,
    RuntimeFailure,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Pass => 0,
            Status::VerifierFailure => 1,
            Status::RuntimeFailure => 3,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub status: Status,
    pub summary: Summary,
    pub out: PathBuf,
}

/// Shared manifest, rewritten after every job so partial runs stay readable.
struct Journal {
    dir: PathBuf,
    manifest: Mutex<Manifest>,
}

impl Journal {
    fn update(
        &self,
        key: &str,
        status: JobStatus,
        error: Option<String>,
        files: Vec<String>,
    ) -> Result<()> {
        let mut m = self.manifest.lock().expect("manifest lock");
        if let Some(job) = m.jobs.get_mut(key) {
            job.status = status;
            job.error = error;
            job.files = files;
        }
        io::write_json(&self.dir.join(MANIFEST), &*m)
    }

    fn finish(&self) -> Result<Manifest> {
        let mut m = self.manifest.lock().expect("manifest lock");
        m.complete = m.jobs.values().all(|j| j.status == JobStatus::Ok);
        io::write_json(&self.dir.join(MANIFEST), &*m)?;
        Ok(m.clone())
    }
}

fn job(kind: &str) -> JobRecord {
    JobRecord {
        kind: kind.into(),
        status: JobStatus::Pending,
        error: None,
        files: Vec::new(),
    }
}

fn build_trace(s: &Scenario, fixture: &Fixture) -> Result<FlowTrace> {
    let horizon = s.flow.horizon;
    let t0 = fixture.state.time();
    let mode = match (s.flow.mode, &fixture.exact) {
        (FlowMode::Auto, Some(_)) => FlowMode::Exact,
        (FlowMode::Auto, None) => FlowMode::Integrate,
        (m, _) => m,
    };
    match mode {
        FlowMode::Exact => {
            let family = fixture.exact.clone().ok_or_else(|| {
                Error::InvalidArgument(format!("fixture {:?} has no exact flow", fixture.name))
            })?;
            let n = s.flow.snapshots;
            let times: Vec<f64> = (0..n)
                .map(|i| t0 + horizon * i as f64 / (n - 1) as f64)
                .collect();
            FlowTrace::from_exact(family, fixture.state.grid(), &times)
        }
        FlowMode::Static => heat::stationary_trace(&fixture.state, t0, t0 + horizon),
        _ => flow::run_flow(&fixture.state, horizon, &s.flow.policy),
    }
}

fn type3_report(trace: &FlowTrace) -> BoundReport {
    let fit = flow::fit_type3_constant(trace);
    let mut r = BoundReport::new("type-iii", "sup|Rm|(t) ≤ A/(A + t)");
    r.samples = fit.margin.len();
    match fit.a_star {
        Some(a) => {
            r.fitted_constants.insert("A_star".into(), a);
            r.worst_margin = fit
                .margin
                .iter()
                .map(|(_, v, b)| b - v)
                .fold(f64::INFINITY, f64::min);
        }
        None => {
            r.worst_margin = f64::NEG_INFINITY;
            r.violations = 1;
        }
    }
    if let Some(reason) = fit.reason {
        r.note(reason);
    }
    r.finish();
    r.pass = fit.a_star.is_some();
    r
}

fn noncollapse_report(
    trace: &FlowTrace,
    budget: usize,
    r_min: f64,
    r_max: f64,
    seed: u64,
) -> Result<BoundReport> {
    let plan = SamplePlan::Random {
        budget,
        seed,
        r_min,
        r_max,
    };
    let nc = flow::monitor_noncollapse(trace, &plan)?;
    let mut r = BoundReport::new(
        "non-collapse",
        "vol B(x, r; t) ≥ κ rⁿ whenever r² sup_B |Rm| ≤ 1",
    );
    r.samples = nc.samples.len();
    r.violations = usize::from(nc.kappa_hat.is_none());
    if let Some(k) = nc.kappa_hat {
        r.fitted_constants.insert("kappa_hat".into(), k);
        r.worst_margin = k;
    } else {
        r.worst_margin = f64::NEG_INFINITY;
        r.note("no sampled ball met the curvature-scale restriction".into());
    }
    r.fitted_constants
        .insert("rejected".into(), nc.rejected as f64);
    if nc.compact_collapse {
        r.flag("collapse at large scales");
    }
    r.finish();
    r.pass = nc.kappa_hat.is_some_and(|k| k > 0.0);
    Ok(r)
}

/// Runs one verifier; the optional table is a series to write next to the
/// report.
fn run_verifier(
    spec: &VerifierSpec,
    trace: &FlowTrace,
    kernels: &BTreeMap<String, KernelSolution>,
    seed: u64,
) -> Result<(BoundReport, Option<CsvTable>)> {
    let kernel = |name: &str| {
        kernels
            .get(name)
            .expect("kernel presence is checked before dispatch")
    };
    Ok(match spec {
        VerifierSpec::GradientEstimate { kernel: k, window } => {
            (bounds::verify_gradient_estimate(kernel(k), *window)?, None)
        }
        VerifierSpec::HarnackGrowth {
            kernel: k,
            delta,
            pairs,
        } => (
            bounds::verify_harnack_growth(kernel(k), *delta, pairs, None)?,
            None,
        ),
        VerifierSpec::KernelEnvelope { kernel: k } => {
            (bounds::verify_kernel_envelope(kernel(k))?, None)
        }
        VerifierSpec::CenterF { kernel: k } => {
            (bounds::verify_center_f_bound(kernel(k), trace)?, None)
        }
        VerifierSpec::MassConservation {
            kernel: k,
            tolerance,
        } => (heat::verify_mass_conservation(kernel(k), *tolerance)?, None),
        VerifierSpec::EntropyMonotonicity {
            kernel: k,
            t_ref,
            tolerance,
            agreement,
        } => {
            let (report, rows) =
                verify_entropy_monotonicity(kernel(k), *t_ref, *tolerance, *agreement)?;
            (report, Some(io::entropy_csv(&rows)))
        }
        VerifierSpec::Sobolev {
            t,
            kappa,
            a,
            samples,
        } => (
            bounds::verify_sobolev(&trace.state_at(*t)?, *t, *kappa, *a, *samples, seed)?,
            None,
        ),
        VerifierSpec::DistanceDoubling { x, y, s, t } => {
            (flow::check_distance_doubling(trace, *x, *y, *s, *t)?, None)
        }
        VerifierSpec::VolumeComparability {
            x,
            r,
            s_prime,
            t4,
            t5,
        } => (
            flow::check_volume_comparability(trace, *x, *r, *s_prime, *t4, *t5)?,
            None,
        ),
        VerifierSpec::TypeIii {} => (type3_report(trace), None),
        VerifierSpec::NonCollapse {
            budget,
            r_min,
            r_max,
        } => (
            noncollapse_report(trace, *budget, *r_min, *r_max, seed)?,
            None,
        ),
    })
}

fn blowdown_reports(
    s: &Scenario,
    fixture: &Fixture,
    trace: &Arc<FlowTrace>,
    dir: &Path,
) -> Result<(Vec<(String, BoundReport)>, Vec<String>)> {
    let spec = s.blowdown.as_ref().expect("blowdown job without spec");
    let exact = match spec.base {
        BlowdownBase::Auto => fixture.exact.is_some(),
        BlowdownBase::Exact => true,
        BlowdownBase::Trace => false,
    };
    let base = if exact {
        let family = fixture.exact.clone().ok_or_else(|| {
            Error::InvalidArgument(format!("fixture {:?} has no exact flow", fixture.name))
        })?;
        BaseFlow::Exact {
            family,
            grid: fixture.state.grid(),
        }
    } else {
        BaseFlow::Trace(Arc::clone(trace))
    };
    let config = spec.config(s.flow.horizon, !exact);
    let seq = blowdown::build_sequence(&base, spec.anchor, &config)?;
    let entropy = blowdown::entropy_sequence(&seq)?;
    let limit = blowdown::soliton_limit_report(&seq)?;

    let mut files = Vec::new();
    for (name, table) in [
        ("blowdown", io::blowdown_csv(&seq, &limit)),
        ("profiles", io::profile_csv(&seq)),
    ] {
        let rel = format!("series/{name}.csv");
        table.write(&dir.join(&rel))?;
        files.push(rel);
    }
    io::write_json(&dir.join("series/blowdown.json"), &(&entropy, &limit))?;
    files.push("series/blowdown.json".into());

    let mut e = BoundReport::new(
        "blowdown-entropy",
        "W+_k(s) ≤ W+_{k+1}(s) + o(1) and W+_k(s) Cauchy in k",
    );
    for f in &seq.flags {
        e.flag(f);
    }
    e.samples = entropy.w_plus.iter().map(Vec::len).sum();
    e.worst_margin = blowdown::MONOTONE_TOLERANCE - entropy.worst_decrease;
    e.fitted_constants
        .insert("worst_decrease".into(), entropy.worst_decrease);
    e.fitted_constants
        .insert("trailing_increment".into(), entropy.trailing_increment);
    e.fitted_constants
        .insert("sup_abs_W".into(), entropy.sup_abs);
    e.fitted_constants.insert("tau0".into(), config.tau0);
    e.finish();
    e.pass = entropy.monotone && entropy.cauchy;

    let mut l = BoundReport::new(
        "soliton-limit",
        "Rc + Hess f_k + g_k/(2s) → 0 with a non-flat limit profile",
    );
    for f in &limit.flags {
        l.flag(f);
    }
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    l.samples = limit.defect_at_profile_time.len();
    l.worst_margin = -last(&limit.defect_at_profile_time);
    l.fitted_constants
        .insert("D_last".into(), last(&limit.defect_at_profile_time));
    l.fitted_constants.insert(
        "profile_distance_last".into(),
        last(&limit.profile_distance),
    );
    l.fitted_constants
        .insert("sup_rm_last".into(), last(&limit.sup_rm));
    l.fitted_constants
        .insert("metric_defect_last".into(), last(&limit.metric_defect));
    l.note(format!("proxy: {}", limit.proxy));
    l.finish();
    l.pass = limit.defect_decay && limit.non_flat;
    Ok((
        vec![("blowdown-entropy".into(), e), ("soliton-limit".into(), l)],
        files,
    ))
}

fn summary_row(r: &BoundReport) -> SummaryRow {
    SummaryRow {
        target: r.target.clone(),
        verdict: r.verdict().into(),
        pass: r.pass,
        in_hypothesis: r.in_hypothesis,
        worst_margin: r.worst_margin,
        slack: r.slack,
        samples: r.samples,
        violations: r.violations,
        fitted_constants: r.fitted_constants.clone(),
        hypothesis_flags: r.hypothesis_flags.clone(),
    }
}

fn write_report(dir: &Path, name: &str, report: &BoundReport) -> Result<String> {
    let rel = format!("reports/{name}.json");
    io::write_json(&dir.join(&rel), report)?;
    Ok(rel)
}

/// Executes a validated scenario into `opts.out`. Solver failures are
/// recorded in the manifest and reflected in the status; only failures to
/// write the run directory itself are returned as errors.
pub fn run_scenario(s: &Scenario, text: &str, opts: &RunOptions) -> Result<RunOutcome> {
    let dir = opts.out.clone();
    let seed = opts.seed.unwrap_or(s.seed);
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    fs::write(dir.join("scenario.toml"), text).map_err(|e| Error::Io {
        path: dir.join("scenario.toml"),
        source: e,
    })?;

    let mut jobs = BTreeMap::from([("flow".to_string(), job("flow"))]);
    for name in s.kernels.keys() {
        jobs.insert(format!("kernel.{name}"), job("kernel"));
    }
    for (name, v) in &s.verifiers {
        jobs.insert(format!("verifier.{name}"), job(v.kind()));
    }
    if s.blowdown.is_some() {
        jobs.insert("blowdown".into(), job("blowdown"));
    }
    let journal = Journal {
        dir: dir.clone(),
        manifest: Mutex::new(Manifest {
            schema_version: SCHEMA_VERSION,
            scenario: s.name.clone(),
            seed,
            complete: false,
            jobs,
        }),
    };
    let all_keys: Vec<String> = journal
        .manifest
        .lock()
        .expect("manifest lock")
        .jobs
        .keys()
        .cloned()
        .collect();
    for k in &all_keys {
        journal.update(k, JobStatus::Pending, None, Vec::new())?;
    }

    let mut reports: BTreeMap<String, BoundReport> = BTreeMap::new();
    info!("{}: building fixture {:?}", s.name, s.initial.fixture);
    let flow_result = fixtures::build(&s.initial.fixture, &s.initial.params).and_then(|fx| {
        let trace = build_trace(s, &fx)?;
        Ok((fx, Arc::new(trace)))
    });
    let (fixture, trace) = match flow_result {
        Ok(v) => v,
        Err(e) => {
            warn!("flow failed: {e}");
            journal.update("flow", JobStatus::Failed, Some(e.to_string()), Vec::new())?;
            for k in all_keys.iter().filter(|k| *k != "flow") {
                journal.update(
                    k,
                    JobStatus::Skipped,
                    Some("flow failed".into()),
                    Vec::new(),
                )?;
            }
            return finish(&journal, s, seed, &reports, &dir);
        }
    };
    let mut files = vec!["series/monitor.csv".to_string()];
    io::monitor_csv(&trace).write(&dir.join(&files[0]))?;
    if s.output.trace {
        io::save_trace(&dir.join("trace"), &trace)?;
        files.push("trace/manifest.json".into());
    }
    journal.update("flow", JobStatus::Ok, None, files)?;
    info!(
        "flow: {} snapshots over [{}, {}]",
        trace.len(),
        trace.start(),
        trace.end()
    );

    // Kernels, then verifiers, each as a concurrent batch; every job writes
    // its own files.
    let kernel_jobs: Vec<_> = s.kernels.iter().collect();
    let solved: Vec<(String, Result<KernelSolution>)> = kernel_jobs
        .par_iter()
        .map(|(name, k)| {
            let opts = k.options();
            let result = match k.direction {
                KernelDirection::Forward => {
                    heat::solve_forward_heat(&trace, k.anchor, k.time, k.width, &opts)
                }
                KernelDirection::Conjugate => {
                    heat::solve_conjugate_kernel(&trace, k.anchor, k.time, k.width, &opts)
                }
            };
            ((*name).clone(), result)
        })
        .collect();
    let mut kernels = BTreeMap::new();
    for (name, result) in solved {
        let key = format!("kernel.{name}");
        match result {
            Ok(k) => {
                let mut files = vec![format!("series/mass_{name}.csv")];
                io::mass_curve_csv(&k).write(&dir.join(&files[0]))?;
                if s.output.kernels {
                    io::save_kernel(&dir.join("kernels").join(&name), &k)?;
                    files.push(format!("kernels/{name}/manifest.json"));
                }
                info!(
                    "kernel {name}: {} stored times, {} steps",
                    k.times().len(),
                    k.steps()
                );
                journal.update(&key, JobStatus::Ok, None, files)?;
                kernels.insert(name, k);
            }
            Err(e) => {
                warn!("kernel {name} failed: {e}");
                journal.update(&key, JobStatus::Failed, Some(e.to_string()), Vec::new())?;
            }
        }
    }

    let verifier_jobs: Vec<_> = s.verifiers.iter().collect();
    let outcomes: Vec<(String, Option<Result<(BoundReport, Option<CsvTable>)>>)> = verifier_jobs
        .par_iter()
        .map(|(name, spec)| {
            let ready = spec.kernels().iter().all(|k| kernels.contains_key(*k));
            let out = ready.then(|| run_verifier(spec, &trace, &kernels, seed));
            ((*name).clone(), out)
        })
        .collect();
    for (name, outcome) in outcomes {
        let key = format!("verifier.{name}");
        match outcome {
            None => journal.update(
                &key,
                JobStatus::Skipped,
                Some("a kernel it reads failed".into()),
                Vec::new(),
            )?,
            Some(Err(e)) => {
                warn!("verifier {name} failed: {e}");
                journal.update(&key, JobStatus::Failed, Some(e.to_string()), Vec::new())?;
            }
            Some(Ok((report, table))) => {
                let mut files = vec![write_report(&dir, &name, &report)?];
                if let Some(t) = table {
                    let rel = format!("series/entropy_{name}.csv");
                    t.write(&dir.join(&rel))?;
                    files.push(rel);
                }
                info!("verifier {name}: {}", report.verdict());
                journal.update(&key, JobStatus::Ok, None, files)?;
                reports.insert(name, report);
            }
        }
    }

    if s.blowdown.is_some() {
        match blowdown_reports(s, &fixture, &trace, &dir) {
            Ok((rs, mut files)) => {
                for (name, r) in rs {
                    files.push(write_report(&dir, &name, &r)?);
                    info!("{name}: {}", r.verdict());
                    reports.insert(name, r);
                }
                journal.update("blowdown", JobStatus::Ok, None, files)?;
            }
            Err(e) => {
                warn!("blow-down failed: {e}");
                journal.update(
                    "blowdown",
                    JobStatus::Failed,
                    Some(e.to_string()),
                    Vec::new(),
                )?;
            }
        }
    }
    finish(&journal, s, seed, &reports, &dir)
}

fn finish(
    journal: &Journal,
    s: &Scenario,
    seed: u64,
    reports: &BTreeMap<String, BoundReport>,
    dir: &Path,
) -> Result<RunOutcome> {
    let manifest = journal.finish()?;
    let status = if !manifest.complete {
        Status::RuntimeFailure
    } else if reports.values().any(|r| r.in_hypothesis && !r.pass) {
        Status::VerifierFailure
    } else {
        Status::Pass
    };
    let summary = Summary {
        scenario: s.name.clone(),
        seed,
        status,
        reports: reports
            .iter()
            .map(|(k, r)| (k.clone(), summary_row(r)))
            .collect(),
    };
    io::write_json(&dir.join(SUMMARY), &summary)?;
    Ok(RunOutcome {
        status,
        summary,
        out: dir.to_path_buf(),
    })
}
