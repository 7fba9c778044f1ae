//! Continuous conic programs with named variable blocks and tagged rows.
//!
//! Models are built as `min cᵀx` over rows `aᵀx {>=,=} b` with each variable
//! block living in a declared cone (free, nonnegative, or second-order).
//! Row tags are the public handle for dual extraction: solvers return one
//! multiplier per tag, so duals of physical constraints (e.g. flux
//! conservation) can be recovered by name.
//!
//! Dual sign convention: with the Lagrangian `cᵀx - Σ y_r (a_rᵀx - b_r)`,
//! multipliers of `>=` rows are nonnegative in a minimization and the dual
//! objective is `bᵀy`. Shadow prices read as "cost of raising the RHS".

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Central numeric tolerances. One instance is threaded through solves and
/// checks; the harness config can override the defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Tolerances {
    /// Row/bound violation accepted as feasible.
    pub feasibility: f64,
    /// Relative primal-dual gap accepted as optimal.
    pub duality_gap: f64,
    /// Distance from {0,1} accepted as integral.
    pub integrality: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            feasibility: 1e-8,
            duality_gap: 1e-6,
            integrality: 1e-6,
        }
    }
}

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum ModelError {
    #[error("duplicate block name `{0}`")]
    DuplicateBlock(String),
    #[error("block `{0}` must have size >= 1")]
    ZeroSizeBlock(String),
    #[error("second-order block `{0}` must have dimension >= 2")]
    SocTooSmall(String),
    #[error("duplicate row tag `{0}`")]
    DuplicateTag(String),
    #[error("variable {0} does not resolve to a column")]
    UnresolvedVar(VarRef),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("unknown row tag `{0}`")]
    UnknownTag(String),
    #[error("row `{0}` has no variables and is unsatisfiable")]
    ConstantInfeasibleRow(String),
    #[error("bounds on second-order block `{0}` are not supported")]
    BoundOnSocBlock(String),
    #[error("solution status is {0:?}, not optimal")]
    NotOptimal(SolveStatus),
}

/// Handle for a registered variable block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockId(pub usize);

/// Reference to one column: a block handle plus an index into the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarRef {
    pub block: BlockId,
    pub index: usize,
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}[{}]", self.block.0, self.index)
    }
}

/// Cone kinds a variable block may live in. The first coordinate of a
/// second-order block is the radius term: `x₀ >= ||x₁..||`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    Free,
    Nonneg,
    SecondOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub kind: ConeKind,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    /// `expr >= rhs`
    Ge,
    /// `expr = rhs`
    Eq,
}

/// Sparse affine expression `Σ cᵢ·xᵢ + constant`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearExpr {
    pub terms: Vec<(VarRef, f64)>,
    pub constant: f64,
}

impl LinearExpr {
    pub fn new() -> Self {
        LinearExpr::default()
    }

    pub fn constant(value: f64) -> Self {
        LinearExpr {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn var(v: VarRef) -> Self {
        LinearExpr::new().term(v, 1.0)
    }

    /// Chainable term append.
    pub fn term(mut self, v: VarRef, coeff: f64) -> Self {
        self.terms.push((v, coeff));
        self
    }

    pub fn add_term(&mut self, v: VarRef, coeff: f64) {
        self.terms.push((v, coeff));
    }

    pub fn add_constant(&mut self, value: f64) {
        self.constant += value;
    }

    pub fn add_expr(&mut self, other: &LinearExpr, scale: f64) {
        for &(v, c) in &other.terms {
            self.terms.push((v, c * scale));
        }
        self.constant += other.constant * scale;
    }

    /// Merge duplicate variables and drop exact zeros. Term order becomes
    /// (block, index), which is also the canonical column order.
    pub fn canonicalize(&mut self) {
        self.terms.sort_by_key(|(v, _)| *v);
        let mut merged: Vec<(VarRef, f64)> = Vec::with_capacity(self.terms.len());
        for &(v, c) in &self.terms {
            match merged.last_mut() {
                Some((lv, lc)) if *lv == v => *lc += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        self.terms = merged;
    }

    pub fn evaluate(&self, value_of: &dyn Fn(VarRef) -> f64) -> f64 {
        self.terms
            .iter()
            .map(|&(v, c)| c * value_of(v))
            .sum::<f64>()
            + self.constant
    }

    fn is_finite(&self) -> bool {
        self.constant.is_finite() && self.terms.iter().all(|(_, c)| c.is_finite())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub cone: ConeSpec,
    /// First column of the block in the canonical ordering.
    pub start: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Row {
    pub tag: String,
    pub expr: LinearExpr,
    pub sense: Sense,
    pub rhs: f64,
}

/// Handle for an appended row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RowId(pub usize);

/// A continuous conic program under construction. Columns are ordered by
/// block registration order, then index; rows by insertion order. Two builds
/// of the same model therefore serialize identically.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    blocks: Vec<BlockInfo>,
    block_names: BTreeMap<String, BlockId>,
    rows: Vec<Row>,
    row_tags: BTreeMap<String, RowId>,
    objective: LinearExpr,
    /// Explicit bounds on single variables; cone-implied bounds (nonneg
    /// lower bound 0) need no entry.
    bounds: BTreeMap<VarRef, (f64, f64)>,
    n_cols: usize,
}

impl ConicProgram {
    pub fn new() -> Self {
        ConicProgram::default()
    }

    pub fn add_block(
        &mut self,
        name: &str,
        size: usize,
        kind: ConeKind,
    ) -> Result<BlockId, ModelError> {
        if size == 0 {
            return Err(ModelError::ZeroSizeBlock(name.to_string()));
        }
        if kind == ConeKind::SecondOrder && size < 2 {
            return Err(ModelError::SocTooSmall(name.to_string()));
        }
        if self.block_names.contains_key(name) {
            return Err(ModelError::DuplicateBlock(name.to_string()));
        }
        let id = BlockId(self.blocks.len());
        self.blocks.push(BlockInfo {
            name: name.to_string(),
            cone: ConeSpec { kind, dim: size },
            start: self.n_cols,
        });
        self.block_names.insert(name.to_string(), id);
        self.n_cols += size;
        Ok(id)
    }

    pub fn var(&self, block: BlockId, index: usize) -> VarRef {
        VarRef { block, index }
    }

    pub fn block(&self, id: BlockId) -> &BlockInfo {
        &self.blocks[id.0]
    }

    pub fn blocks(&self) -> &[BlockInfo] {
        &self.blocks
    }

    pub fn block_by_name(&self, name: &str) -> Option<BlockId> {
        self.block_names.get(name).copied()
    }

    pub fn num_cols(&self) -> usize {
        self.n_cols
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn row(&self, id: RowId) -> &Row {
        &self.rows[id.0]
    }

    pub fn row_by_tag(&self, tag: &str) -> Option<&Row> {
        self.row_tags.get(tag).map(|id| &self.rows[id.0])
    }

    pub fn objective(&self) -> &LinearExpr {
        &self.objective
    }

    pub fn bounds(&self) -> &BTreeMap<VarRef, (f64, f64)> {
        &self.bounds
    }

    /// Column of a variable in the canonical ordering.
    pub fn column_of(&self, v: VarRef) -> Result<usize, ModelError> {
        let block = self
            .blocks
            .get(v.block.0)
            .ok_or(ModelError::UnresolvedVar(v))?;
        if v.index >= block.cone.dim {
            return Err(ModelError::UnresolvedVar(v));
        }
        Ok(block.start + v.index)
    }

    fn check_expr(&self, tag: &str, expr: &LinearExpr) -> Result<(), ModelError> {
        if !expr.is_finite() {
            return Err(ModelError::NonFinite(tag.to_string()));
        }
        for &(v, _) in &expr.terms {
            self.column_of(v)?;
        }
        Ok(())
    }

    pub fn add_row(
        &mut self,
        tag: &str,
        expr: LinearExpr,
        sense: Sense,
        rhs: f64,
    ) -> Result<RowId, ModelError> {
        if self.row_tags.contains_key(tag) {
            return Err(ModelError::DuplicateTag(tag.to_string()));
        }
        if !rhs.is_finite() {
            return Err(ModelError::NonFinite(tag.to_string()));
        }
        self.check_expr(tag, &expr)?;
        let mut expr = expr;
        expr.canonicalize();
        let id = RowId(self.rows.len());
        self.rows.push(Row {
            tag: tag.to_string(),
            expr,
            sense,
            rhs,
        });
        self.row_tags.insert(tag.to_string(), id);
        Ok(id)
    }

    /// Adds `scale * expr` to the minimization objective.
    pub fn add_objective(&mut self, expr: &LinearExpr, scale: f64) -> Result<(), ModelError> {
        self.check_expr("objective", expr)?;
        self.objective.add_expr(expr, scale);
        self.objective.canonicalize();
        Ok(())
    }

    /// Sets an explicit bound interval for one variable. Infinite endpoints
    /// mean unbounded on that side.
    pub fn set_bound(&mut self, v: VarRef, lower: f64, upper: f64) -> Result<(), ModelError> {
        self.column_of(v)?;
        if self.blocks[v.block.0].cone.kind == ConeKind::SecondOrder {
            return Err(ModelError::BoundOnSocBlock(
                self.blocks[v.block.0].name.clone(),
            ));
        }
        if lower.is_nan() || upper.is_nan() {
            return Err(ModelError::NonFinite(format!("bound on {v}")));
        }
        self.bounds.insert(v, (lower, upper));
        Ok(())
    }

    /// Effective bound of a variable, combining the cone-implied lower bound
    /// with any explicit entry.
    pub fn bound_of(&self, v: VarRef) -> (f64, f64) {
        let implied_lo = match self.blocks[v.block.0].cone.kind {
            ConeKind::Nonneg => 0.0,
            ConeKind::SecondOrder if v.index == 0 => 0.0,
            _ => f64::NEG_INFINITY,
        };
        match self.bounds.get(&v) {
            Some(&(lo, hi)) => (lo.max(implied_lo), hi),
            None => (implied_lo, f64::INFINITY),
        }
    }

    /// Residuals `lhs - rhs` of every row at a primal point. Callers decide
    /// what counts as a violation for Ge vs Eq rows.
    pub fn row_residuals(&self, value_of: &dyn Fn(VarRef) -> f64) -> Vec<(String, Sense, f64)> {
        self.rows
            .iter()
            .map(|r| (r.tag.clone(), r.sense, r.expr.evaluate(value_of) - r.rhs))
            .collect()
    }

    /// Flattens the program into sparse standard form. Finite explicit bounds
    /// become auto-tagged rows (`bnd:lo:…`, `bnd:hi:…`); redundant zero lower
    /// bounds on nonnegative blocks are skipped. Rows with no variables are
    /// dropped when trivially satisfied and rejected otherwise.
    pub fn to_standard_form(&self) -> Result<StandardForm, ModelError> {
        let mut rows = Vec::new();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();

        for row in &self.rows {
            if row.expr.terms.is_empty() {
                let ok = match row.sense {
                    Sense::Ge => row.expr.constant >= row.rhs - 1e-12,
                    Sense::Eq => (row.expr.constant - row.rhs).abs() <= 1e-12,
                };
                if ok {
                    continue;
                }
                return Err(ModelError::ConstantInfeasibleRow(row.tag.clone()));
            }
            let r = rows.len();
            for &(v, c) in &row.expr.terms {
                triplets.push((r, self.column_of(v)?, c));
            }
            rows.push(StdRow {
                tag: row.tag.clone(),
                sense: row.sense,
                rhs: row.rhs - row.expr.constant,
            });
        }

        // Bound rows come after user rows, in BTreeMap (column) order.
        for (&v, &(lo, hi)) in &self.bounds {
            let col = self.column_of(v)?;
            let block = &self.blocks[v.block.0];
            let implied_zero = block.cone.kind == ConeKind::Nonneg && lo == 0.0;
            if lo.is_finite() && !implied_zero {
                let r = rows.len();
                triplets.push((r, col, 1.0));
                rows.push(StdRow {
                    tag: format!("bnd:lo:{}:{}", block.name, v.index),
                    sense: Sense::Ge,
                    rhs: lo,
                });
            }
            if hi.is_finite() {
                let r = rows.len();
                triplets.push((r, col, -1.0));
                rows.push(StdRow {
                    tag: format!("bnd:hi:{}:{}", block.name, v.index),
                    sense: Sense::Ge,
                    rhs: -hi,
                });
            }
        }

        triplets.sort_by_key(|&(r, c, _)| (r, c));

        let mut objective = vec![0.0; self.n_cols];
        for &(v, c) in &self.objective.terms {
            objective[self.column_of(v)?] += c;
        }

        Ok(StandardForm {
            blocks: self.blocks.clone(),
            rows,
            triplets,
            objective,
            objective_constant: self.objective.constant,
            n_cols: self.n_cols,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StdRow {
    pub tag: String,
    pub sense: Sense,
    pub rhs: f64,
}

/// Frozen sparse form of a program: `min cᵀx` s.t. the listed rows, with the
/// cone layout given per block. Immutable, shareable, and the unit the
/// solvers consume. The canonical JSON serialization of this struct is the
/// cross-solver exchange format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardForm {
    pub blocks: Vec<BlockInfo>,
    pub rows: Vec<StdRow>,
    /// `(row, col, value)` sorted by row then column.
    pub triplets: Vec<(usize, usize, f64)>,
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub n_cols: usize,
}

impl StandardForm {
    pub fn column_of(&self, v: VarRef) -> Option<usize> {
        let block = self.blocks.get(v.block.0)?;
        if v.index >= block.cone.dim {
            return None;
        }
        Some(block.start + v.index)
    }

    /// Canonical JSON document (pretty-printed, deterministic field order).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("standard form serializes")
    }

    pub fn row_index(&self, tag: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.tag == tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Limit,
}

/// Result of solving a program. For `Infeasible` the `duals` map carries a
/// Farkas certificate ray over row tags (aggregating rows with those weights
/// yields an unsatisfiable inequality); for `Unbounded` the `primal` map
/// carries an improving ray.
#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub primal: BTreeMap<VarRef, f64>,
    pub duals: BTreeMap<String, f64>,
    pub objective: f64,
    pub gap: f64,
}

impl Solution {
    pub fn value(&self, v: VarRef) -> f64 {
        self.primal.get(&v).copied().unwrap_or(0.0)
    }

    /// Lagrange multiplier of a tagged row. Requires an optimal solution;
    /// multipliers of `>=` rows are nonnegative in a minimization.
    pub fn dual_of(&self, tag: &str) -> Result<f64, ModelError> {
        if self.status != SolveStatus::Optimal {
            return Err(ModelError::NotOptimal(self.status));
        }
        self.duals
            .get(tag)
            .copied()
            .ok_or_else(|| ModelError::UnknownTag(tag.to_string()))
    }
}

/// `|cᵀx - bᵀy| / (1 + |cᵀx|)`: strong-duality residual usable on any solved
/// program (bound rows included, since they carry duals too).
pub fn duality_residual(form: &StandardForm, solution: &Solution) -> f64 {
    let primal_obj = solution.objective - form.objective_constant;
    let dual_obj: f64 = form
        .rows
        .iter()
        .map(|r| r.rhs * solution.duals.get(&r.tag).copied().unwrap_or(0.0))
        .sum();
    (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs())
}
