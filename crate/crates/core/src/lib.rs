//! Gas-network-aware unit commitment.
//!
//! This crate builds day-ahead unit-commitment models that anticipate the
//! natural-gas market: the commitment problem, the economic dispatch it
//! induces, and the steady-state gas dispatch whose flux-conservation duals
//! price the fuel of gas-fueled plants. Commitments can be required to keep
//! every committed gas unit profitable at those anticipated prices
//! (bid-validity constraints), which turns the usual commit-then-discover
//! pipeline into a single mixed-integer second-order cone program.
//!
//! Layout:
//! - [`model`] — conic programs with named blocks and tagged rows;
//! - [`power`] — unit commitment and DC dispatch constraint builders;
//! - [`gas`] — steady-state gas dispatch with the conic pressure-drop
//!   relaxation and nodal prices from balance-row duals;
//! - [`coupling`] — heat rates, bid ladders, zonal prices, bid validity;
//! - [`reform`] — stacked three-stage assembly, its single-level conic
//!   reformulation, and the enumeration oracle;
//! - [`solver`] — the continuous conic contract, branch-and-bound, and
//!   Benders decomposition;
//! - [`harness`] — data files, scenarios, the two operating modes, sweeps,
//!   and reporting (also the `gasuc` CLI).

pub mod coupling;
pub mod gas;
pub mod harness;
pub mod model;
pub mod power;
pub mod reform;
pub mod solver;
pub mod stack;

pub use model::{ConicProgram, Solution, SolveStatus, Tolerances};
pub use solver::{ConicSolver, InteriorPointSolver, SolveLimits};
