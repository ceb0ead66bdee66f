use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use riccilab::fixtures::CATALOG;
use riccilab_cli::report::{emit_report, ReportError};
use riccilab_cli::run::{run_scenario, RunOptions};
use riccilab_cli::scenario::{self, LoadError};
use riccilab_cli::{EXIT_RUNTIME, EXIT_SCHEMA};

/// Type III Ricci flow laboratory.
#[derive(Parser)]
#[command(name = "riccilab", version)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file (or a bundled scenario by name).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; defaults to $RICCILAB_OUT/<name>, else runs/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize a run directory.
    Report {
        dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the named initial metrics.
    ListFixtures,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("riccilab: cannot start {n} threads: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    match cli.command {
        Command::Run { config, out, seed } => {
            let (s, text) = match scenario::load(&config) {
                Ok(v) => v,
                Err(e @ (LoadError::Schema(_) | LoadError::Io(..))) => {
                    eprintln!("riccilab: {e}");
                    return ExitCode::from(EXIT_SCHEMA);
                }
            };
            let out = out.or_else(|| s.out.clone()).unwrap_or_else(|| {
                match std::env::var_os("RICCILAB_OUT") {
                    Some(root) => PathBuf::from(root).join(&s.name),
                    None => PathBuf::from("runs").join(&s.name),
                }
            });
            match run_scenario(&s, &text, &RunOptions { out, seed }) {
                Ok(outcome) => {
                    println!(
                        "{}: {:?} ({})",
                        s.name,
                        outcome.status,
                        outcome.out.display()
                    );
                    ExitCode::from(outcome.status.exit_code())
                }
                Err(e) => {
                    eprintln!("riccilab: {e}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
        Command::Report { dir, out } => {
            let Some(dir) = dir.or(out) else {
                eprintln!("riccilab: report needs a run directory");
                return ExitCode::from(EXIT_SCHEMA);
            };
            match emit_report(&dir) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e @ ReportError::MissingManifest(_)) => {
                    eprintln!("riccilab: {e}");
                    ExitCode::from(EXIT_SCHEMA)
                }
                Err(e) => {
                    eprintln!("riccilab: {e}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
        Command::ListFixtures => {
            let rows: Vec<Vec<String>> = CATALOG
                .iter()
                .map(|f| {
                    let params: Vec<String> =
                        f.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    vec![
                        f.name.to_string(),
                        f.backend.to_string(),
                        params.join(" "),
                        f.description.to_string(),
                    ]
                })
                .collect();
            print!(
                "{}",
                riccilab::io::aligned(&["fixture", "backend", "parameters", "description"], &rows)
            );
            ExitCode::SUCCESS
        }
    }
}
