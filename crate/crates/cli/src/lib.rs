//! Scenario runner for the riccilab laboratory: TOML scenarios in, report
//! directories out.

pub mod report;
pub mod run;
pub mod scenario;

/// Exit status for schema and input errors.
pub const EXIT_SCHEMA: u8 = 2;
/// Exit status for solver failures (partial reports are kept).
pub const EXIT_RUNTIME: u8 = 3;
