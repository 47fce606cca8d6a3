//! Sweep runner and reporting for trajbo experiments.
//!
//! A sweep is a CSV file whose rows are optimizer settings. Each row is
//! expanded across methods and replicates; every resulting run gets a master
//! seed derived from `(sweep seed, row, method, replicate)` alone, so results
//! do not depend on scheduling. See the README for the file formats.

mod error;
mod report;
mod runner;
mod sweep;

pub use error::{HarnessError, Result};
pub use report::{emit_report, ReportOutcome};
pub use runner::{
    derive_seed, format_float, master_seed_from_env, run_experiments, write_atomic, Manifest,
    RunEvent, RunOptions, RunRecord, RunStatus, MANIFEST_FILE, MASTER_SEED_ENV,
};
pub use sweep::{parse_sweep, parse_sweep_str, GroundTruth, SweepRow, SWEEP_COLUMNS};
