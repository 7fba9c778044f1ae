//! Solvers: the continuous conic contract and the mixed-integer methods
//! (branch-and-bound oracle, Benders decomposition) layered on top of it.

pub mod benders;
pub mod bnb;
pub mod conic;
pub mod preprocess;

pub use benders::{benders_solve, repair_candidate, BendersConfig, BendersOutcome, Cut, CutKind, IterationRecord};
pub use bnb::{branch_and_bound, BnbConfig, BnbOutcome, MixedProgram};
pub use conic::{ConicSolver, InteriorPointSolver};
pub use preprocess::{apply_eliminations, preprocess_invalid_bids, EliminatedBid};

use std::time::Duration;

/// Resource limits for a single continuous solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveLimits {
    pub max_iter: u32,
    pub time_limit: Option<Duration>,
}

impl Default for SolveLimits {
    fn default() -> Self {
        SolveLimits {
            max_iter: 200,
            time_limit: None,
        }
    }
}

/// Variable fixings applied at solve time without mutating the program
/// (branch-and-bound branching, Benders candidate evaluation).
pub type Fixings = [(crate::model::VarRef, f64)];
