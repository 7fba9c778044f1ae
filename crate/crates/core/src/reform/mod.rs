//! Stacked three-stage assembly and its single-level reformulation.
//!
//! The coupled model is a chain: commitment binaries feed an economic
//! dispatch, whose plant outputs feed a gas dispatch, whose balance duals
//! price the fuel, and a validity block constrains commitments against
//! those duals. [`assemble_trilevel`] builds the stages into one tagged
//! context and classifies every row and block. [`reformulate`] collapses
//! the continuous stages by strong duality into one mixed-binary conic
//! program: copies of all rows, explicit dual variables for dispatch and
//! gas rows, dual-feasibility rows per column, a zero-gap row in which
//! dual-times-binary products are replaced by exact envelope cells, and the
//! rescaled validity rows. [`joint_misocp`] is the same program without the
//! dual machinery — the plain co-optimization used for ablations and as
//! the repair oracle.

pub mod oracle;

use crate::coupling::{
    bid_logic_rows, bid_validity_row, gas_demand_rows, BidValidityParams, CouplingVars, GfppLink,
    PriceZone,
};
use crate::gas::{build_gas_blocks, GasSystem, GasVars, GfppDemand};
use crate::model::{
    BlockId, ConeKind, ConicProgram, LinearExpr, ModelError, RowId, Sense, VarRef,
};
use crate::power::{build_ed_block, build_uc_block, EdVars, PowerSystem, UcVars};
use crate::solver::MixedProgram;
use crate::stack::{ModelStack, RowRole, VarRole};
use std::collections::BTreeMap;

#[derive(thiserror::Error, Debug)]
pub enum ReformError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("row `{0}` couples stages illegally: {1}")]
    BlockStructure(String, String),
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    BadAlpha(f64),
    #[error("duplicate link for generator `{0}`")]
    DuplicateLink(String),
    #[error("{0}")]
    Data(String),
}

/// The assembled three-stage program: one tagged context plus the
/// classification needed to slice it into stage matrices.
#[derive(Debug, Clone)]
pub struct TriLevelProgram {
    pub stack: ModelStack,
    pub horizon: usize,
    pub power: PowerSystem,
    pub gas: GasSystem,
    pub links: Vec<GfppLink>,
    pub zones: Vec<PriceZone>,
    pub params: BidValidityParams,
    /// Generator indices of the linked gas plants, in link order.
    pub gfpps: Vec<usize>,
    pub uc: UcVars,
    pub ed: EdVars,
    pub gas_vars: GasVars,
    pub cpl: CouplingVars,
    /// Commitment binaries in canonical (block, index) order.
    pub binaries: Vec<VarRef>,
    pub commitment_rows: Vec<RowId>,
    pub dispatch_rows: Vec<RowId>,
    pub gas_rows: Vec<RowId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriLevelDims {
    pub binary_cols: usize,
    pub commitment_aux_cols: usize,
    pub power_cols: usize,
    pub gas_cols: usize,
    pub commitment_rows: usize,
    pub dispatch_rows: usize,
    pub gas_rows: usize,
    pub validity_rows: usize,
}

impl TriLevelProgram {
    pub fn dimensions(&self) -> TriLevelDims {
        let count_cols = |role: VarRole| -> usize {
            self.stack
                .blocks_with_role(role)
                .iter()
                .map(|&b| self.stack.program.block(b).cone.dim)
                .sum()
        };
        TriLevelDims {
            binary_cols: count_cols(VarRole::Commitment),
            commitment_aux_cols: count_cols(VarRole::CommitmentAux),
            power_cols: count_cols(VarRole::Power),
            gas_cols: count_cols(VarRole::Gas),
            commitment_rows: self.commitment_rows.len(),
            dispatch_rows: self.dispatch_rows.len(),
            gas_rows: self.gas_rows.len(),
            validity_rows: self.links.len() * self.horizon,
        }
    }

}

/// Builds the full coupled context and classifies it. The three builders
/// share one program; every row lands in exactly one stage, verified
/// against the variable roles before returning.
pub fn assemble_trilevel(
    power: &PowerSystem,
    gas: &GasSystem,
    links: &[GfppLink],
    zones: &[PriceZone],
    params: BidValidityParams,
    horizon: usize,
) -> Result<TriLevelProgram, ReformError> {
    let mut gfpps = Vec::new();
    for link in links {
        let g = power
            .generator_index(&link.generator)
            .ok_or_else(|| ReformError::Data(format!("unknown generator `{}`", link.generator)))?;
        if gfpps.contains(&g) {
            return Err(ReformError::DuplicateLink(link.generator.clone()));
        }
        gfpps.push(g);
    }
    let mut coupled_junctions: Vec<usize> = Vec::new();
    for link in links {
        let j = gas
            .junction_index(&link.junction)
            .ok_or_else(|| ReformError::Data(format!("unknown junction `{}`", link.junction)))?;
        if !coupled_junctions.contains(&j) {
            coupled_junctions.push(j);
        }
    }
    coupled_junctions.sort_unstable();
    let mut gfpps_sorted = gfpps.clone();
    gfpps_sorted.sort_unstable();

    let mut stack = ModelStack::new();
    let uc = build_uc_block(&mut stack, power, horizon, &gfpps_sorted)?;
    let ed = build_ed_block(&mut stack, power, horizon, &uc, &gfpps_sorted)?;
    let gas_vars = build_gas_blocks(
        &mut stack,
        gas,
        &GfppDemand::Variables(&coupled_junctions),
        horizon,
    )?;
    let mut cpl = gas_demand_rows(&mut stack, power, gas, links, &uc, &ed, &gas_vars, horizon)?;
    cpl.merge(bid_logic_rows(
        &mut stack,
        power,
        &gfpps_sorted,
        &uc,
        &ed,
        horizon,
    )?);

    // stage discipline: commitment rows see only commitment variables,
    // dispatch rows never see gas variables, gas rows never see binaries
    for (i, row) in stack.program.rows().iter().enumerate() {
        let id = RowId(i);
        let role = stack.row_role(id);
        for &(v, _) in &row.expr.terms {
            let vrole = stack.var_role(v.block);
            let bad = match role {
                RowRole::Commitment => {
                    !matches!(vrole, VarRole::Commitment | VarRole::CommitmentAux)
                }
                RowRole::Dispatch => !matches!(vrole, VarRole::Power | VarRole::Commitment),
                RowRole::Gas => !matches!(vrole, VarRole::Gas | VarRole::Power),
            };
            if bad {
                return Err(ReformError::BlockStructure(
                    row.tag.clone(),
                    format!(
                        "{role:?} row references a {vrole:?} block `{}`",
                        stack.program.block(v.block).name
                    ),
                ));
            }
        }
    }

    let mut binaries = Vec::new();
    for block in stack.blocks_with_role(VarRole::Commitment) {
        for i in 0..stack.program.block(block).cone.dim {
            binaries.push(VarRef { block, index: i });
        }
    }
    binaries.sort_unstable();

    let commitment_rows = stack.rows_with_role(RowRole::Commitment);
    let dispatch_rows = stack.rows_with_role(RowRole::Dispatch);
    let gas_rows = stack.rows_with_role(RowRole::Gas);

    Ok(TriLevelProgram {
        stack,
        horizon,
        power: power.clone(),
        gas: gas.clone(),
        links: links.to_vec(),
        zones: zones.to_vec(),
        params,
        gfpps,
        uc,
        ed,
        gas_vars,
        cpl,
        binaries,
        commitment_rows,
        dispatch_rows,
        gas_rows,
    })
}

/// An exact envelope cell replacing the product `y * z` of a nonnegative
/// bounded dual and a binary: `w <= ybar z`, `w <= y`, `w >= y - ybar(1-z)`,
/// `w >= 0`. Exact at every integer `z` when `0 <= y <= ybar`.
#[derive(Debug, Clone, Copy)]
pub struct McCormickCell {
    pub y: VarRef,
    pub z: VarRef,
    pub w: VarRef,
    pub ybar: f64,
}

/// Appends one envelope cell. A nonpositive bound degenerates the cell to
/// `w = 0`.
pub fn mccormick_cell(
    program: &mut ConicProgram,
    y: VarRef,
    z: VarRef,
    ybar: f64,
    tag: &str,
) -> Result<McCormickCell, ModelError> {
    let block = program.add_block(&format!("mc:{tag}"), 1, ConeKind::Nonneg)?;
    let w = program.var(block, 0);
    if ybar <= 0.0 {
        program.add_row(&format!("mc0:{tag}"), LinearExpr::var(w), Sense::Eq, 0.0)?;
        return Ok(McCormickCell { y, z, w, ybar });
    }
    program.add_row(
        &format!("mc1:{tag}"),
        LinearExpr::new().term(z, ybar).term(w, -1.0),
        Sense::Ge,
        0.0,
    )?;
    program.add_row(
        &format!("mc2:{tag}"),
        LinearExpr::var(y).term(w, -1.0),
        Sense::Ge,
        0.0,
    )?;
    program.add_row(
        &format!("mc3:{tag}"),
        LinearExpr::var(w).term(y, -1.0).term(z, -ybar),
        Sense::Ge,
        -ybar,
    )?;
    Ok(McCormickCell { y, z, w, ybar })
}

/// The single-level program plus the bookkeeping the solvers need.
#[derive(Debug, Clone)]
pub struct SingleLevelMisocp {
    pub mip: MixedProgram,
    pub alpha: f64,
    /// Dual bound used by the envelope cells.
    pub ybar: f64,
    pub cells: Vec<McCormickCell>,
    /// Whether validity rows (and the dual machinery) are present.
    pub gas_aware: bool,
    /// Tags of commitment-stage rows (the decomposition master keeps them).
    pub master_row_tags: Vec<String>,
    /// Commitment-stage variables (binaries and their affine aux).
    pub master_vars: Vec<VarRef>,
    /// Commitment-stage objective (already weighted).
    pub master_objective: LinearExpr,
    /// Remaining objective (already weighted), owned by the subproblem.
    pub sub_objective: LinearExpr,
    /// Dual variable of each dispatch/gas row by tag.
    pub dual_var_of: BTreeMap<String, VarRef>,
}

/// Bound policy for the dual variables entering envelope cells. The
/// default is a loud multiple of the largest bid price.
#[derive(Debug, Clone, Copy)]
pub struct DualBoundPolicy {
    pub factor: f64,
}

impl Default for DualBoundPolicy {
    fn default() -> Self {
        DualBoundPolicy { factor: 10.0 }
    }
}

impl DualBoundPolicy {
    pub fn bound(&self, power: &PowerSystem) -> f64 {
        let max_bid = power
            .generators
            .iter()
            .flat_map(|g| g.bids.iter().map(|b| b.price))
            .fold(0.0, f64::max);
        self.factor * max_bid.max(1.0)
    }
}

fn cost_map(expr: &LinearExpr) -> BTreeMap<VarRef, f64> {
    let mut m = BTreeMap::new();
    for &(v, c) in &expr.terms {
        *m.entry(v).or_insert(0.0) += c;
    }
    m
}

/// Collapses the assembled stages into one mixed-binary conic program at
/// weight `alpha` (commitment and dispatch costs) versus `1 - alpha` (gas
/// cost), including the validity rows over the explicit gas duals.
pub fn reformulate(
    tri: &TriLevelProgram,
    alpha: f64,
    policy: &DualBoundPolicy,
) -> Result<SingleLevelMisocp, ReformError> {
    build_single_level(tri, alpha, policy, true)
}

/// The plain joint co-optimization at the same weights: identical rows and
/// objective but no dual variables, no zero-gap row, no validity rows.
/// A relaxation of the gas-aware program, so its optimum never exceeds it.
pub fn joint_misocp(tri: &TriLevelProgram, alpha: f64) -> Result<SingleLevelMisocp, ReformError> {
    build_single_level(tri, alpha, &DualBoundPolicy::default(), false)
}

fn build_single_level(
    tri: &TriLevelProgram,
    alpha: f64,
    policy: &DualBoundPolicy,
    gas_aware: bool,
) -> Result<SingleLevelMisocp, ReformError> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(ReformError::BadAlpha(alpha));
    }
    let src = &tri.stack.program;
    let mut prog = ConicProgram::new();

    // identical block layout, so variable references carry over verbatim
    for block in src.blocks() {
        prog.add_block(&block.name, block.cone.dim, block.cone.kind)?;
    }
    for row in src.rows() {
        prog.add_row(&row.tag, row.expr.clone(), row.sense, row.rhs)?;
    }

    prog.add_objective(&tri.stack.obj_commit, alpha)?;
    prog.add_objective(&tri.stack.obj_power, alpha)?;
    prog.add_objective(&tri.stack.obj_gas, 1.0 - alpha)?;

    let master_row_tags: Vec<String> = tri
        .commitment_rows
        .iter()
        .map(|&r| src.row(r).tag.clone())
        .collect();
    let mut master_vars = Vec::new();
    for role in [VarRole::Commitment, VarRole::CommitmentAux] {
        for block in tri.stack.blocks_with_role(role) {
            for i in 0..src.block(block).cone.dim {
                master_vars.push(VarRef { block, index: i });
            }
        }
    }
    master_vars.sort_unstable();

    let mut master_objective = tri.stack.obj_commit.clone();
    master_objective.add_expr(&LinearExpr::new(), 0.0);
    let mut scaled_master = LinearExpr::new();
    scaled_master.add_expr(&master_objective, alpha);
    let mut sub_objective = LinearExpr::new();
    sub_objective.add_expr(&tri.stack.obj_power, alpha);
    sub_objective.add_expr(&tri.stack.obj_gas, 1.0 - alpha);
    sub_objective.canonicalize();

    if !gas_aware {
        return Ok(SingleLevelMisocp {
            mip: MixedProgram {
                program: prog,
                binaries: tri.binaries.clone(),
            },
            alpha,
            ybar: 0.0,
            cells: Vec::new(),
            gas_aware: false,
            master_row_tags,
            master_vars,
            master_objective: scaled_master,
            sub_objective,
            dual_var_of: BTreeMap::new(),
        });
    }

    let ybar = policy.bound(&tri.power);
    log::warn!(
        "bilinear dual bound set to {ybar:.3} ({}x the maximum bid price); \
         duals beyond it would cut off optimal solutions",
        policy.factor
    );

    // dual variable per dualized row, split by sense (cone of the dual)
    let n_ed_ge = tri
        .dispatch_rows
        .iter()
        .filter(|&&r| src.row(r).sense == Sense::Ge)
        .count();
    let n_ed_eq = tri.dispatch_rows.len() - n_ed_ge;
    let n_g_ge = tri
        .gas_rows
        .iter()
        .filter(|&&r| src.row(r).sense == Sense::Ge)
        .count();
    let n_g_eq = tri.gas_rows.len() - n_g_ge;

    let ed_ge = prog.add_block("dual:ed:ge", n_ed_ge.max(1), ConeKind::Nonneg)?;
    let ed_eq = prog.add_block("dual:ed:eq", n_ed_eq.max(1), ConeKind::Free)?;
    let g_ge = prog.add_block("dual:gas:ge", n_g_ge.max(1), ConeKind::Nonneg)?;
    let g_eq = prog.add_block("dual:gas:eq", n_g_eq.max(1), ConeKind::Free)?;

    let mut dual_var_of: BTreeMap<String, VarRef> = BTreeMap::new();
    let assign = |rows: &[RowId], ge: BlockId, eq: BlockId, map: &mut BTreeMap<String, VarRef>| {
        let (mut ige, mut ieq) = (0usize, 0usize);
        for &r in rows {
            let row = src.row(r);
            let v = match row.sense {
                Sense::Ge => {
                    ige += 1;
                    VarRef {
                        block: ge,
                        index: ige - 1,
                    }
                }
                Sense::Eq => {
                    ieq += 1;
                    VarRef {
                        block: eq,
                        index: ieq - 1,
                    }
                }
            };
            map.insert(row.tag.clone(), v);
        }
    };
    assign(&tri.dispatch_rows, ed_ge, ed_eq, &mut dual_var_of);
    assign(&tri.gas_rows, g_ge, g_eq, &mut dual_var_of);

    // column transposes of the dualized rows, split by variable role
    let role = |v: VarRef| tri.stack.var_role(v.block);
    let mut col_terms: BTreeMap<VarRef, Vec<(VarRef, f64)>> = BTreeMap::new();
    for &r in tri.dispatch_rows.iter().chain(tri.gas_rows.iter()) {
        let row = src.row(r);
        let y = dual_var_of[&row.tag];
        for &(v, c) in &row.expr.terms {
            if matches!(role(v), VarRole::Power | VarRole::Gas) {
                col_terms.entry(v).or_default().push((y, c));
            }
        }
    }

    let c_p = cost_map(&tri.stack.obj_power);
    let c_g = cost_map(&tri.stack.obj_gas);

    // dual feasibility per continuous column, sense set by the column cone
    for block in src.blocks() {
        let block_id = prog.block_by_name(&block.name).expect("copied block");
        let vrole = tri.stack.var_role(block_id);
        let (weight, costs, prefix) = match vrole {
            VarRole::Power => (alpha, &c_p, "df:p"),
            VarRole::Gas => (1.0 - alpha, &c_g, "df:g"),
            _ => continue,
        };
        match block.cone.kind {
            ConeKind::Nonneg | ConeKind::Free => {
                for i in 0..block.cone.dim {
                    let v = VarRef {
                        block: block_id,
                        index: i,
                    };
                    let mut expr = LinearExpr::new();
                    if let Some(terms) = col_terms.get(&v) {
                        for &(y, c) in terms {
                            expr.add_term(y, -c);
                        }
                    }
                    let rhs = -weight * costs.get(&v).copied().unwrap_or(0.0);
                    let sense = match block.cone.kind {
                        ConeKind::Nonneg => Sense::Ge,
                        _ => Sense::Eq,
                    };
                    prog.add_row(&format!("{prefix}:{}:{i}", block.name), expr, sense, rhs)?;
                }
            }
            ConeKind::SecondOrder => {
                // reduced cost vector of a cone block must live in the cone
                let zeta = prog.add_block(
                    &format!("dc:{}", block.name),
                    block.cone.dim,
                    ConeKind::SecondOrder,
                )?;
                for i in 0..block.cone.dim {
                    let v = VarRef {
                        block: block_id,
                        index: i,
                    };
                    let mut expr = LinearExpr::var(VarRef {
                        block: zeta,
                        index: i,
                    });
                    if let Some(terms) = col_terms.get(&v) {
                        for &(y, c) in terms {
                            expr.add_term(y, c);
                        }
                    }
                    let rhs = weight * costs.get(&v).copied().unwrap_or(0.0);
                    prog.add_row(&format!("{prefix}:{}:{i}", block.name), expr, Sense::Eq, rhs)?;
                }
            }
        }
    }

    // zero-gap row: dual objective >= weighted primal cost, with every
    // dual-times-binary product replaced by an envelope cell
    let mut cells = Vec::new();
    let mut sd = LinearExpr::new();
    for &r in tri.dispatch_rows.iter().chain(tri.gas_rows.iter()) {
        let row = src.row(r);
        let y = dual_var_of[&row.tag];
        sd.add_term(y, row.rhs - row.expr.constant);
    }
    for &r in &tri.dispatch_rows {
        let row = src.row(r);
        let y = dual_var_of[&row.tag];
        for &(v, c) in &row.expr.terms {
            if role(v) == VarRole::Commitment {
                if row.sense != Sense::Ge {
                    return Err(ReformError::BlockStructure(
                        row.tag.clone(),
                        "binary-coupled dispatch rows must be inequalities".into(),
                    ));
                }
                let tag = format!("{}|{}:{}", row.tag, src.block(v.block).name, v.index);
                let cell = mccormick_cell(&mut prog, y, v, ybar, &tag)?;
                sd.add_term(cell.w, -c);
                cells.push(cell);
            }
        }
    }
    sd.add_expr(&tri.stack.obj_power, -alpha);
    sd.add_expr(&tri.stack.obj_gas, -(1.0 - alpha));
    prog.add_row("sd:gap", sd, Sense::Ge, 0.0)?;

    // validity rows over the gas balance duals, rescaled back to true prices
    let scale = 1.0 / (1.0 - alpha);
    for link in &tri.links {
        let g = tri
            .power
            .generator_index(&link.generator)
            .expect("validated link");
        let zone = tri
            .zones
            .iter()
            .find(|z| z.id == link.zone)
            .ok_or_else(|| ReformError::Data(format!("unknown zone `{}`", link.zone)))?;
        let set = zone.averaging_set();
        for t in 1..=tri.horizon {
            let mut psi_terms = Vec::with_capacity(set.len());
            for j in set {
                let y = dual_var_of
                    .get(&format!("gbal:{j}:{t}"))
                    .copied()
                    .ok_or_else(|| ReformError::Data(format!("no balance dual for `{j}`")))?;
                psi_terms.push((y, 1.0 / set.len() as f64));
            }
            let rho = tri
                .cpl
                .marginal_price(g, t)
                .ok_or_else(|| ReformError::Data(format!("no bid ladder for `{}`", link.generator)))?;
            bid_validity_row(
                &mut prog,
                link,
                tri.power.generators[g].p_max,
                &tri.params,
                rho,
                tri.uc.on(g, t),
                &psi_terms,
                scale,
                t,
            )?;
        }
    }

    Ok(SingleLevelMisocp {
        mip: MixedProgram {
            program: prog,
            binaries: tri.binaries.clone(),
        },
        alpha,
        ybar,
        cells,
        gas_aware: true,
        master_row_tags,
        master_vars,
        master_objective: scaled_master,
        sub_objective,
        dual_var_of,
    })
}
