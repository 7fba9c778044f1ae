//! A conic program annotated with stage roles.
//!
//! The coupled model stacks three decision stages — commitment, power
//! dispatch, gas dispatch — plus validity data into one program context.
//! Builders register every block and row with its role so the stacked
//! matrices (commitment set, dispatch block, gas block) can be extracted
//! later without string parsing.

use crate::model::{BlockId, ConeKind, ConicProgram, LinearExpr, ModelError, RowId, Sense};
use std::collections::BTreeMap;

/// Which stage a variable block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarRole {
    /// Binary commitment decisions (on/off, start/stop, bid selection).
    Commitment,
    /// Continuous variables decided with the commitment (startup cost
    /// epigraph, marginal bid price): affine consequences of the binaries.
    CommitmentAux,
    /// Power dispatch continuous variables.
    Power,
    /// Gas dispatch continuous variables (including relaxation cones).
    Gas,
}

/// Which stage a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowRole {
    /// Commitment feasible set: binaries and their affine aux variables only.
    Commitment,
    /// Dispatch rows over power variables and commitment variables.
    Dispatch,
    /// Gas rows over gas variables and power variables (never binaries).
    Gas,
}

/// Program plus role annotations and the stage-split objective.
#[derive(Debug, Clone, Default)]
pub struct ModelStack {
    pub program: ConicProgram,
    var_roles: BTreeMap<BlockId, VarRole>,
    row_roles: BTreeMap<RowId, RowRole>,
    /// Objective over commitment(+aux) variables.
    pub obj_commit: LinearExpr,
    /// Objective over power dispatch variables.
    pub obj_power: LinearExpr,
    /// Objective over gas dispatch variables.
    pub obj_gas: LinearExpr,
}

impl ModelStack {
    pub fn new() -> Self {
        ModelStack::default()
    }

    pub fn add_block(
        &mut self,
        name: &str,
        size: usize,
        kind: ConeKind,
        role: VarRole,
    ) -> Result<BlockId, ModelError> {
        let id = self.program.add_block(name, size, kind)?;
        self.var_roles.insert(id, role);
        Ok(id)
    }

    pub fn add_row(
        &mut self,
        tag: &str,
        expr: LinearExpr,
        sense: Sense,
        rhs: f64,
        role: RowRole,
    ) -> Result<RowId, ModelError> {
        let id = self.program.add_row(tag, expr, sense, rhs)?;
        self.row_roles.insert(id, role);
        Ok(id)
    }

    pub fn var_role(&self, block: BlockId) -> VarRole {
        self.var_roles[&block]
    }

    pub fn row_role(&self, row: RowId) -> RowRole {
        self.row_roles[&row]
    }

    pub fn rows_with_role(&self, role: RowRole) -> Vec<RowId> {
        self.row_roles
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn blocks_with_role(&self, role: VarRole) -> Vec<BlockId> {
        self.var_roles
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Stage objectives summed into the program objective (commitment and
    /// power at weight `alpha`, gas at `1 - alpha`); `alpha = 1` recovers
    /// the plain power-system objective.
    pub fn apply_objective(&mut self, alpha: f64) -> Result<(), ModelError> {
        let commit = self.obj_commit.clone();
        let power = self.obj_power.clone();
        let gas = self.obj_gas.clone();
        self.program.add_objective(&commit, alpha)?;
        self.program.add_objective(&power, alpha)?;
        self.program.add_objective(&gas, 1.0 - alpha)?;
        Ok(())
    }
}
