//! Study harness: data files, scenario scaling, the two operating modes,
//! grid sweeps, and reporting.
//!
//! Mode A is current practice: commit and dispatch gas-blind, push the
//! resulting plant fuel demand into the gas stage, price the zones from its
//! balance duals, and account the economic loss of committed plants whose
//! bids turn out invalid. Mode B solves the gas-aware single-level program,
//! so committed plants are profitable at the anticipated prices by
//! construction.

pub mod config;
pub mod data;
pub mod report;
pub mod runs;
pub mod sweep;

pub use config::RunConfig;
pub use data::{load_system, mini_ne, scale_loads, toy2x2, validate_system, LoadError, TestSystem};
pub use report::{CostBreakdown, Mode, RunReport, Scenario, SolverStats, ValidityRow};
pub use runs::{run_baseline, run_gna, RunError};
pub use sweep::{sweep, SweepOutcome, SweepRequest};
