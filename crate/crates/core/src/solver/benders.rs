//! Benders decomposition of the gas-aware single-level program: a binary
//! master over the commitment stage exchanging cuts with the continuous
//! subproblem that carries dispatch, gas, duals, envelope cells, and
//! validity rows.
//!
//! Cut coefficients come straight from the multipliers of the solve-time
//! fixing rows: an optimal subproblem yields an optimality cut
//! `F >= f(ẑ) + μᵀ(z - ẑ)`; an infeasible one yields a Farkas ray whose
//! aggregated inequality excludes the candidate. Feasibility rays are
//! normalized to unit max-norm, and cuts can additionally be separated at a
//! candidate blended toward a core point. A repair pass that switches off
//! the worst validity violator runs on a fixed cadence to seed incumbents.

use crate::coupling::zonal_price;
use crate::gas::nodal_prices;
use crate::model::{
    ConicProgram, LinearExpr, ModelError, Sense, Solution, SolveStatus, StandardForm, VarRef,
};
use crate::reform::{SingleLevelMisocp, TriLevelProgram};
use crate::solver::conic::fixing_tag;
use crate::solver::{branch_and_bound, BnbConfig, ConicSolver, SolveLimits};
use std::collections::BTreeMap;
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct BendersConfig {
    pub max_iterations: usize,
    pub rel_gap: f64,
    pub time_limit: Option<Duration>,
    /// Run the repair pass every this many iterations.
    pub heuristic_cadence: usize,
    /// Also separate cuts at a candidate blended toward the core point.
    pub perturb: bool,
    /// Core-point coordinate for binaries (all-ones scaled by this).
    pub core_value: f64,
    /// Blend weight toward the core point.
    pub blend: f64,
    pub master: BnbConfig,
    pub sub_limits: SolveLimits,
}

impl Default for BendersConfig {
    fn default() -> Self {
        BendersConfig {
            max_iterations: 200,
            rel_gap: 1e-4,
            time_limit: None,
            heuristic_cadence: 30,
            perturb: true,
            core_value: 0.5,
            blend: 0.5,
            master: BnbConfig {
                binary_cap: 64,
                ..BnbConfig::default()
            },
            sub_limits: SolveLimits::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutKind {
    Optimality,
    Feasibility,
}

/// An affine cut over (commitment variables, value variable), stored in
/// master references. Optimality cuts underestimate the subproblem value;
/// feasibility cuts exclude only infeasible commitments.
#[derive(Debug, Clone)]
pub struct Cut {
    pub kind: CutKind,
    pub tag: String,
    pub expr: LinearExpr,
    pub rhs: f64,
    pub origin_iteration: usize,
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub cut: Option<CutKind>,
    pub sub_status: SolveStatus,
    pub wall_ms: u128,
}

#[derive(Debug)]
pub struct BendersOutcome {
    /// Merged solution over the original program's variables.
    pub solution: Solution,
    pub lower_bound: f64,
    pub iterations: Vec<IterationRecord>,
    pub cuts: Vec<Cut>,
}

#[derive(thiserror::Error, Debug)]
pub enum BendersError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bnb(#[from] crate::solver::bnb::BnbError),
    #[error("master became infeasible although an incumbent exists; cut pool: {0:?}")]
    OverCut(Vec<String>),
}

/// Master/subproblem split of a single-level program.
struct Split {
    master: crate::solver::MixedProgram,
    /// Full-program var -> master var.
    to_master: BTreeMap<VarRef, VarRef>,
    /// Master var -> full-program var.
    from_master: BTreeMap<VarRef, VarRef>,
    fvar: VarRef,
    /// Master objective (master refs) without the value term.
    master_objective: LinearExpr,
    sub_form: StandardForm,
    /// Master-stage vars that appear in subproblem rows, full-program refs.
    link_vars: Vec<VarRef>,
}

fn split(p7: &SingleLevelMisocp) -> Result<Split, ModelError> {
    let src = &p7.mip.program;
    let master_set: std::collections::BTreeSet<VarRef> =
        p7.master_vars.iter().copied().collect();
    let master_tags: std::collections::BTreeSet<&str> =
        p7.master_row_tags.iter().map(|s| s.as_str()).collect();

    // compact master: only commitment-stage blocks, same order
    let mut master = ConicProgram::new();
    let mut to_master = BTreeMap::new();
    let mut from_master = BTreeMap::new();
    let mut master_blocks = std::collections::BTreeSet::new();
    for v in &p7.master_vars {
        master_blocks.insert(v.block);
    }
    for (bi, block) in src.blocks().iter().enumerate() {
        let id = crate::model::BlockId(bi);
        if !master_blocks.contains(&id) {
            continue;
        }
        let new_id = master.add_block(&block.name, block.cone.dim, block.cone.kind)?;
        for i in 0..block.cone.dim {
            let full = VarRef {
                block: id,
                index: i,
            };
            let local = VarRef {
                block: new_id,
                index: i,
            };
            to_master.insert(full, local);
            from_master.insert(local, full);
        }
    }
    let translate = |expr: &LinearExpr| -> LinearExpr {
        let mut out = LinearExpr::constant(expr.constant);
        for &(v, c) in &expr.terms {
            out.add_term(to_master[&v], c);
        }
        out
    };
    for row in src.rows() {
        if master_tags.contains(row.tag.as_str()) {
            master.add_row(&row.tag, translate(&row.expr), row.sense, row.rhs)?;
        }
    }
    let fblock = master.add_block("benders:f", 1, crate::model::ConeKind::Nonneg)?;
    let fvar = master.var(fblock, 0);
    let master_objective = translate(&p7.master_objective);
    master.add_objective(&master_objective, 1.0)?;
    master.add_objective(&LinearExpr::var(fvar), 1.0)?;
    let master_binaries: Vec<VarRef> = p7
        .mip
        .binaries
        .iter()
        .map(|v| to_master[v])
        .collect();

    // subproblem: every block (references stay valid), every non-master row
    let mut sub = ConicProgram::new();
    for block in src.blocks() {
        sub.add_block(&block.name, block.cone.dim, block.cone.kind)?;
    }
    let mut link_set = std::collections::BTreeSet::new();
    for row in src.rows() {
        if master_tags.contains(row.tag.as_str()) {
            continue;
        }
        for &(v, _) in &row.expr.terms {
            if master_set.contains(&v) {
                link_set.insert(v);
            }
        }
        sub.add_row(&row.tag, row.expr.clone(), row.sense, row.rhs)?;
    }
    sub.add_objective(&p7.sub_objective, 1.0)?;
    let sub_form = sub.to_standard_form()?;

    Ok(Split {
        master: crate::solver::MixedProgram {
            program: master,
            binaries: master_binaries,
        },
        to_master,
        from_master,
        fvar,
        master_objective,
        sub_form,
        link_vars: link_set.into_iter().collect(),
    })
}

/// Candidate values of every master variable, in full-program references.
type Candidate = BTreeMap<VarRef, f64>;

enum Separation {
    Optimality { objective: f64, cut: LinearExpr, rhs: f64, sub: Solution },
    Feasibility { cut: LinearExpr, rhs: f64 },
    Stuck,
}

/// Solves the subproblem at a candidate and turns the outcome into a cut
/// (master references).
fn separate(
    splitted: &Split,
    solver: &dyn ConicSolver,
    limits: &SolveLimits,
    candidate: &Candidate,
) -> Separation {
    let fixings: Vec<(VarRef, f64)> = splitted
        .link_vars
        .iter()
        .map(|&v| (v, candidate.get(&v).copied().unwrap_or(0.0)))
        .collect();
    let sub = solver.solve_fixed(&splitted.sub_form, limits, &fixings);
    match sub.status {
        SolveStatus::Optimal => {
            // F >= f(ẑ) + Σ μ (z - ẑ)
            let mut cut = LinearExpr::var(splitted.fvar);
            let mut rhs = sub.objective;
            for &(v, value) in &fixings {
                let mu = sub
                    .duals
                    .get(&fixing_tag(&splitted.sub_form, v))
                    .copied()
                    .unwrap_or(0.0);
                cut.add_term(splitted.to_master[&v], -mu);
                rhs -= mu * value;
            }
            Separation::Optimality {
                objective: sub.objective,
                cut,
                rhs,
                sub,
            }
        }
        SolveStatus::Infeasible => {
            // ray aggregation: Σ y_r b_r + Σ μ z must become nonpositive
            let mut norm: f64 = 0.0;
            for v in sub.duals.values() {
                norm = norm.max(v.abs());
            }
            if norm <= 0.0 {
                return Separation::Stuck;
            }
            let mut base = 0.0;
            for row in &splitted.sub_form.rows {
                base += sub.duals.get(&row.tag).copied().unwrap_or(0.0) / norm * row.rhs;
            }
            let mut cut = LinearExpr::new();
            for &(v, _) in &fixings {
                let mu = sub
                    .duals
                    .get(&fixing_tag(&splitted.sub_form, v))
                    .copied()
                    .unwrap_or(0.0)
                    / norm;
                cut.add_term(splitted.to_master[&v], -mu);
            }
            Separation::Feasibility { cut, rhs: base }
        }
        _ => Separation::Stuck,
    }
}

fn master_candidate(splitted: &Split, solution: &Solution) -> Candidate {
    let mut candidate = BTreeMap::new();
    for (&local, &full) in &splitted.from_master {
        candidate.insert(full, solution.value(local));
    }
    candidate
}

/// Repair pass: at a candidate whose subproblem is infeasible, solve the
/// joint relaxation, price the zones, and switch off the committed plant
/// with the worst validity violation; repeat until the true subproblem is
/// feasible or no violator remains.
#[allow(clippy::too_many_arguments)]
fn repair_heuristic(
    tri: &TriLevelProgram,
    p7: &SingleLevelMisocp,
    splitted: &Split,
    solver: &dyn ConicSolver,
    limits: &SolveLimits,
    joint_form: &StandardForm,
    candidate: &Candidate,
) -> Option<(Candidate, Solution)> {
    let mut current = candidate.clone();
    for _round in 0..=tri.gfpps.len() {
        let fixings: Vec<(VarRef, f64)> = splitted
            .link_vars
            .iter()
            .map(|&v| (v, current.get(&v).copied().unwrap_or(0.0)))
            .collect();
        let sub = solver.solve_fixed(&splitted.sub_form, limits, &fixings);
        if sub.status == SolveStatus::Optimal {
            return Some((current, sub));
        }

        // diagnose on the joint relaxation (no duals constrained there)
        let all_fix: Vec<(VarRef, f64)> = current.iter().map(|(&v, &x)| (v, x)).collect();
        let joint = solver.solve_fixed(joint_form, limits, &all_fix);
        if joint.status != SolveStatus::Optimal {
            return None; // dispatch itself is infeasible; cuts must handle it
        }
        let prices_scaled = nodal_prices(&joint, &tri.gas, tri.horizon).ok()?;
        // joint objective weighs gas at (1 - alpha); undo for true prices
        let rescale = 1.0 / (1.0 - p7.alpha);

        let mut worst: Option<(usize, f64)> = None;
        for link in &tri.links {
            let g = tri.power.generator_index(&link.generator)?;
            let gen = &tri.power.generators[g];
            let zone = tri.zones.iter().find(|z| z.id == link.zone)?;
            for t in 1..=tri.horizon {
                let on = current.get(&tri.uc.on(g, t)).copied().unwrap_or(0.0);
                if on < 0.5 {
                    continue;
                }
                let psi = zonal_price(&prices_scaled, zone, t).ok()? * rescale;
                let rho = current
                    .get(&tri.cpl.marginal_price(g, t)?)
                    .copied()
                    .unwrap_or(0.0);
                let slack = link.alpha_markup * rho
                    - link.heat_rate.marginal_fuel(gen.p_max) * psi;
                if slack < -1e-9 {
                    match worst {
                        Some((_, w)) if w <= -slack => {}
                        _ => worst = Some((g, -slack)),
                    }
                }
            }
        }
        let (g_off, _) = worst?;

        // switch the violator off everywhere and rebuild its derived values
        let gen = &tri.power.generators[g_off];
        let u0 = if gen.initial_on { 1.0 } else { 0.0 };
        for t in 1..=tri.horizon {
            current.insert(tri.uc.on(g_off, t), 0.0);
            let prev = if t == 1 { u0 } else { 0.0 };
            current.insert(tri.uc.start(g_off, t), 0.0);
            current.insert(tri.uc.stop(g_off, t), prev);
            current.insert(tri.uc.startup_cost(g_off, t), 0.0);
            if let Some(rho) = tri.cpl.marginal_price(g_off, t) {
                current.insert(rho, 0.0);
            }
            for b in 0..gen.bids.len() {
                if let Some(w) = tri.uc.bid_select(g_off, b, t) {
                    current.insert(w, 0.0);
                }
            }
        }
        // the new pattern must stay commitment-feasible
        let src = &p7.mip.program;
        let ok = p7.master_row_tags.iter().all(|tag| {
            let row = src.row_by_tag(tag).expect("master row");
            let lhs = row
                .expr
                .evaluate(&|v| current.get(&v).copied().unwrap_or(0.0));
            match row.sense {
                Sense::Ge => lhs >= row.rhs - 1e-9,
                Sense::Eq => (lhs - row.rhs).abs() <= 1e-9,
            }
        });
        if !ok {
            return None;
        }
    }
    None
}

/// Public entry to the repair pass: builds the split and the joint
/// diagnostic form, then runs the violator-switch-off loop on `candidate`
/// (full-program references; binaries plus their derived aux values).
pub fn repair_candidate(
    tri: &TriLevelProgram,
    p7: &SingleLevelMisocp,
    solver: &dyn ConicSolver,
    limits: &SolveLimits,
    candidate: &BTreeMap<VarRef, f64>,
) -> Result<Option<(BTreeMap<VarRef, f64>, Solution)>, ModelError> {
    let splitted = split(p7)?;
    let mut joint_prog = tri.stack.program.clone();
    joint_prog.add_objective(&tri.stack.obj_power, p7.alpha)?;
    joint_prog.add_objective(&tri.stack.obj_gas, 1.0 - p7.alpha)?;
    let joint_form = joint_prog.to_standard_form()?;
    Ok(repair_heuristic(
        tri,
        p7,
        &splitted,
        solver,
        limits,
        &joint_form,
        candidate,
    ))
}

/// Full decomposition loop. Stops at the relative gap or on limits,
/// returning the best incumbent and the iteration log.
pub fn benders_solve(
    p7: &SingleLevelMisocp,
    tri: &TriLevelProgram,
    solver: &dyn ConicSolver,
    cfg: &BendersConfig,
) -> Result<BendersOutcome, BendersError> {
    let started = Instant::now();
    let mut splitted = split(p7)?;

    // joint relaxation used by the repair pass for diagnostics
    let mut joint_prog = tri.stack.program.clone();
    joint_prog.add_objective(&tri.stack.obj_power, p7.alpha)?;
    joint_prog.add_objective(&tri.stack.obj_gas, 1.0 - p7.alpha)?;
    let joint_form = joint_prog.to_standard_form()?;

    let mut iterations = Vec::new();
    let mut cuts: Vec<Cut> = Vec::new();
    // the continuous relaxation of the full program is a sound global
    // bound that the cut pool often needs many rounds to reach
    let root = {
        let form = p7.mip.program.to_standard_form()?;
        let sol = solver.solve(&form, &cfg.sub_limits);
        if sol.status == SolveStatus::Optimal {
            sol.objective
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut lower = root;
    let mut upper = f64::INFINITY;
    let mut incumbent: Option<Solution> = None;
    let mut hit_limit = false;

    let leader_value = |candidate: &Candidate, splitted: &Split| -> f64 {
        splitted.master_objective.evaluate(&|v| {
            candidate
                .get(&splitted.from_master[&v])
                .copied()
                .unwrap_or(0.0)
        })
    };

    let add_cut = |splitted: &mut Split,
                       kind: CutKind,
                       expr: LinearExpr,
                       rhs: f64,
                       iteration: usize,
                       cuts: &mut Vec<Cut>|
     -> Result<(), ModelError> {
        let tag = format!(
            "cut:{}:{}",
            match kind {
                CutKind::Optimality => "opt",
                CutKind::Feasibility => "feas",
            },
            cuts.len()
        );
        splitted.master.program.add_row(&tag, expr.clone(), Sense::Ge, rhs)?;
        cuts.push(Cut {
            kind,
            tag,
            expr,
            rhs,
            origin_iteration: iteration,
        });
        Ok(())
    };

    for iteration in 1..=cfg.max_iterations {
        if cfg
            .time_limit
            .is_some_and(|limit| started.elapsed() >= limit)
        {
            hit_limit = true;
            break;
        }
        let iter_start = Instant::now();

        let master_out = branch_and_bound(&splitted.master, solver, &cfg.master)?;
        match master_out.solution.status {
            SolveStatus::Optimal | SolveStatus::Limit => {}
            SolveStatus::Infeasible => {
                if incumbent.is_some() {
                    return Err(BendersError::OverCut(
                        cuts.iter().map(|c| c.tag.clone()).collect(),
                    ));
                }
                // every commitment is excluded: the instance is infeasible
                return Ok(BendersOutcome {
                    solution: Solution {
                        status: SolveStatus::Infeasible,
                        primal: Default::default(),
                        duals: Default::default(),
                        objective: f64::INFINITY,
                        gap: f64::INFINITY,
                    },
                    lower_bound: f64::INFINITY,
                    iterations,
                    cuts,
                });
            }
            SolveStatus::Unbounded => unreachable!("master value variable is bounded below"),
        }
        lower = lower.max(master_out.best_bound);

        let candidate = master_candidate(&splitted, &master_out.solution);
        let mut cut_kind = None;
        let mut sub_status = SolveStatus::Limit;

        match separate(&splitted, solver, &cfg.sub_limits, &candidate) {
            Separation::Optimality {
                objective,
                cut,
                rhs,
                sub,
            } => {
                sub_status = SolveStatus::Optimal;
                let total = leader_value(&candidate, &splitted) + objective;
                if total < upper - 1e-12 {
                    upper = total;
                    incumbent = Some(merge_solution(&candidate, &sub, total));
                }
                add_cut(
                    &mut splitted,
                    CutKind::Optimality,
                    cut,
                    rhs,
                    iteration,
                    &mut cuts,
                )?;
                cut_kind = Some(CutKind::Optimality);

                // stabilization: a second cut separated at the candidate
                // blended toward the core point cuts the tailing short
                if cfg.perturb {
                    let blended = blend_candidate(tri, &candidate, cfg);
                    if let Separation::Optimality { cut, rhs, .. } =
                        separate(&splitted, solver, &cfg.sub_limits, &blended)
                    {
                        add_cut(
                            &mut splitted,
                            CutKind::Optimality,
                            cut,
                            rhs,
                            iteration,
                            &mut cuts,
                        )?;
                    }
                }
            }
            Separation::Feasibility { cut, rhs } => {
                sub_status = SolveStatus::Infeasible;
                add_cut(
                    &mut splitted,
                    CutKind::Feasibility,
                    cut,
                    rhs,
                    iteration,
                    &mut cuts,
                )?;
                cut_kind = Some(CutKind::Feasibility);

                // acceleration: an extra cut separated toward the core point
                if cfg.perturb {
                    let blended = blend_candidate(tri, &candidate, cfg);
                    match separate(&splitted, solver, &cfg.sub_limits, &blended) {
                        Separation::Optimality { cut, rhs, .. } => {
                            add_cut(
                                &mut splitted,
                                CutKind::Optimality,
                                cut,
                                rhs,
                                iteration,
                                &mut cuts,
                            )?;
                        }
                        Separation::Feasibility { cut, rhs } => {
                            add_cut(
                                &mut splitted,
                                CutKind::Feasibility,
                                cut,
                                rhs,
                                iteration,
                                &mut cuts,
                            )?;
                        }
                        Separation::Stuck => {}
                    }
                }
            }
            Separation::Stuck => {
                hit_limit = true;
            }
        }

        // periodic repair to seed or improve the incumbent
        if sub_status != SolveStatus::Optimal && iteration % cfg.heuristic_cadence == 0 {
            if let Some((repaired, sub)) = repair_heuristic(
                tri,
                p7,
                &splitted,
                solver,
                &cfg.sub_limits,
                &joint_form,
                &candidate,
            ) {
                let total = leader_value(&repaired, &splitted) + sub.objective;
                if total < upper - 1e-12 {
                    upper = total;
                    incumbent = Some(merge_solution(&repaired, &sub, total));
                }
            }
        }

        let gap = if upper.is_finite() {
            ((upper - lower) / upper.abs().max(1.0)).max(0.0)
        } else {
            f64::INFINITY
        };
        iterations.push(IterationRecord {
            iteration,
            lower_bound: lower,
            upper_bound: upper,
            cut: cut_kind,
            sub_status,
            wall_ms: iter_start.elapsed().as_millis(),
        });
        if gap <= cfg.rel_gap {
            break;
        }
        if iteration == cfg.max_iterations {
            hit_limit = true;
        }
    }

    let gap = if upper.is_finite() {
        ((upper - lower) / upper.abs().max(1.0)).max(0.0)
    } else {
        f64::INFINITY
    };
    match incumbent {
        Some(mut solution) => {
            solution.gap = gap;
            if hit_limit && gap > cfg.rel_gap {
                solution.status = SolveStatus::Limit;
            }
            Ok(BendersOutcome {
                solution,
                lower_bound: lower,
                iterations,
                cuts,
            })
        }
        None => Ok(BendersOutcome {
            solution: Solution {
                status: if hit_limit {
                    SolveStatus::Limit
                } else {
                    SolveStatus::Infeasible
                },
                primal: Default::default(),
                duals: Default::default(),
                objective: f64::INFINITY,
                gap: f64::INFINITY,
            },
            lower_bound: lower,
            iterations,
            cuts,
        }),
    }
}

fn merge_solution(candidate: &Candidate, sub: &Solution, total: f64) -> Solution {
    let mut primal = sub.primal.clone();
    for (&v, &x) in candidate {
        primal.insert(v, x);
    }
    Solution {
        status: SolveStatus::Optimal,
        primal,
        duals: sub.duals.clone(),
        objective: total,
        gap: 0.0,
    }
}

/// Binary coordinates blended toward the core point; affine aux values are
/// rebuilt from the blended binaries (marginal price is affine in the
/// selections, the startup epigraph minimum is evaluated directly).
fn blend_candidate(tri: &TriLevelProgram, candidate: &Candidate, cfg: &BendersConfig) -> Candidate {
    let mut blended = candidate.clone();
    for &z in &tri.binaries {
        let x = candidate.get(&z).copied().unwrap_or(0.0);
        blended.insert(z, (1.0 - cfg.blend) * x + cfg.blend * cfg.core_value);
    }
    for (g, gen) in tri.power.generators.iter().enumerate() {
        let u0 = if gen.initial_on { 1.0 } else { 0.0 };
        let mut on_path = Vec::with_capacity(tri.horizon);
        for t in 1..=tri.horizon {
            let u = blended[&tri.uc.on(g, t)];
            let prev = if t == 1 { u0 } else { on_path[t - 2] };
            blended.insert(tri.uc.start(g, t), (u - prev).max(0.0));
            blended.insert(tri.uc.stop(g, t), (prev - u).max(0.0));
            on_path.push(u);
        }
        for t in 1..=tri.horizon {
            blended.insert(
                tri.uc.startup_cost(g, t),
                crate::power::startup_cost_of(gen, &on_path, t),
            );
        }
    }
    for &g in &tri.gfpps {
        let gen = &tri.power.generators[g];
        for t in 1..=tri.horizon {
            let nb = gen.bids.len();
            let mut rho = 0.0;
            for b in 0..nb {
                let w = blended[&tri.uc.bid_select(g, b, t).expect("bit")];
                let w_next = if b + 1 < nb {
                    blended[&tri.uc.bid_select(g, b + 1, t).expect("bit")]
                } else {
                    0.0
                };
                rho += gen.bids[b].price * (w - w_next);
            }
            if let Some(v) = tri.cpl.marginal_price(g, t) {
                blended.insert(v, rho);
            }
        }
    }
    blended
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reform::tests::{toy_system, toy_trilevel};
    use crate::reform::{assemble_trilevel, reformulate, DualBoundPolicy};
    use crate::solver::InteriorPointSolver;

    #[test]
    fn matches_the_monolithic_oracle_on_the_toy() {
        let tri = toy_trilevel();
        let p7 = reformulate(&tri, 0.99, &DualBoundPolicy::default()).unwrap();
        let solver = InteriorPointSolver::new();
        let mono = branch_and_bound(&p7.mip, &solver, &BnbConfig::default()).unwrap();
        let cfg = BendersConfig {
            rel_gap: 1e-6,
            ..BendersConfig::default()
        };
        let out = benders_solve(&p7, &tri, &solver, &cfg).unwrap();
        assert_eq!(out.solution.status, SolveStatus::Optimal);
        let rel = (out.solution.objective - mono.solution.objective).abs()
            / mono.solution.objective.abs().max(1.0);
        assert!(rel <= 1e-5, "benders {} vs monolithic {}", out.solution.objective, mono.solution.objective);
        // bound monotonicity along the run
        for pair in out.iterations.windows(2) {
            assert!(pair[1].lower_bound >= pair[0].lower_bound - 1e-9);
            assert!(pair[1].upper_bound <= pair[0].upper_bound + 1e-9);
            assert!(pair[1].lower_bound <= pair[1].upper_bound + 1e-9);
        }
    }

    #[test]
    fn congested_toy_agrees_too() {
        let (power, mut gas, links, zones) = toy_system();
        gas.junctions[1].demand = vec![12.0];
        let tri = assemble_trilevel(&power, &gas, &links, &zones, Default::default(), 1).unwrap();
        let p7 = reformulate(&tri, 0.99, &DualBoundPolicy::default()).unwrap();
        let solver = InteriorPointSolver::new();
        let mono = branch_and_bound(&p7.mip, &solver, &BnbConfig::default()).unwrap();
        let cfg = BendersConfig {
            rel_gap: 1e-6,
            ..BendersConfig::default()
        };
        let out = benders_solve(&p7, &tri, &solver, &cfg).unwrap();
        let rel = (out.solution.objective - mono.solution.objective).abs()
            / mono.solution.objective.abs().max(1.0);
        assert!(rel <= 1e-5, "benders {} vs monolithic {}", out.solution.objective, mono.solution.objective);
        // the aware solution turns the gas plant off under shedding prices
        assert!(out.solution.value(tri.uc.on(0, 1)) < 0.5);
    }

    #[test]
    fn optimality_cuts_underestimate_f_at_random_candidates() {
        use rand::prelude::*;
        let tri = toy_trilevel();
        let p7 = reformulate(&tri, 0.99, &DualBoundPolicy::default()).unwrap();
        let solver = InteriorPointSolver::new();
        let cfg = BendersConfig::default();
        let out = benders_solve(&p7, &tri, &solver, &cfg).unwrap();
        assert_eq!(out.solution.status, SolveStatus::Optimal);

        let splitted = split(&p7).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut tested = 0;
        'outer: for _ in 0..200 {
            if tested >= 20 {
                break;
            }
            // random feasible commitment: random on-bits, prefix ladders
            let mut candidate: Candidate = BTreeMap::new();
            for (g, gen) in tri.power.generators.iter().enumerate() {
                let on = rng.gen_bool(0.7);
                candidate.insert(tri.uc.on(g, 1), on as u8 as f64);
                let u0 = gen.initial_on as u8 as f64;
                candidate.insert(tri.uc.start(g, 1), ((on as u8 as f64) - u0).max(0.0));
                candidate.insert(tri.uc.stop(g, 1), (u0 - (on as u8 as f64)).max(0.0));
                candidate.insert(
                    tri.uc.startup_cost(g, 1),
                    crate::power::startup_cost_of(gen, &[on as u8 as f64], 1),
                );
            }
            for &g in &tri.gfpps {
                let gen = &tri.power.generators[g];
                let on = candidate[&tri.uc.on(g, 1)] > 0.5;
                let take = if on { rng.gen_range(0..=gen.bids.len()) } else { 0 };
                let mut rho = 0.0;
                for b in 0..gen.bids.len() {
                    let w = (b < take) as u8 as f64;
                    candidate.insert(tri.uc.bid_select(g, b, 1).unwrap(), w);
                    if b < take {
                        rho = gen.bids[b].price;
                    }
                }
                candidate.insert(tri.cpl.marginal_price(g, 1).unwrap(), rho);
            }
            // direct sub solve = f(z); every optimality cut must sit below
            let fixings: Vec<(VarRef, f64)> = splitted
                .link_vars
                .iter()
                .map(|&v| (v, candidate[&v]))
                .collect();
            let direct = solver.solve_fixed(&splitted.sub_form, &Default::default(), &fixings);
            if direct.status != SolveStatus::Optimal {
                continue 'outer;
            }
            tested += 1;
            for cut in out.cuts.iter().filter(|c| c.kind == CutKind::Optimality) {
                // cut: F - Σ μ z >= rhs  =>  estimate = rhs + Σ μ z <= f(z)
                let mut estimate = cut.rhs;
                for &(v, c) in &cut.expr.terms {
                    if v == splitted.fvar {
                        continue;
                    }
                    let full = splitted.from_master[&v];
                    estimate -= c * candidate.get(&full).copied().unwrap_or(0.0);
                }
                assert!(
                    estimate <= direct.objective + 1e-6 * direct.objective.abs().max(1.0),
                    "cut {} overestimates: {estimate} > {}",
                    cut.tag,
                    direct.objective
                );
            }
        }
        assert!(tested >= 5, "too few feasible samples: {tested}");
    }

    #[test]
    fn forced_infeasible_candidate_is_cut_away() {
        // all units off cannot serve the load: the separation must produce
        // a feasibility cut that excludes the pattern
        let tri = toy_trilevel();
        let p7 = reformulate(&tri, 0.99, &DualBoundPolicy::default()).unwrap();
        let solver = InteriorPointSolver::new();
        let splitted = split(&p7).unwrap();
        let mut candidate: Candidate = BTreeMap::new();
        for (g, gen) in tri.power.generators.iter().enumerate() {
            candidate.insert(tri.uc.on(g, 1), 0.0);
            let u0 = gen.initial_on as u8 as f64;
            candidate.insert(tri.uc.start(g, 1), 0.0);
            candidate.insert(tri.uc.stop(g, 1), u0);
            candidate.insert(tri.uc.startup_cost(g, 1), 0.0);
        }
        for &g in &tri.gfpps {
            for b in 0..tri.power.generators[g].bids.len() {
                candidate.insert(tri.uc.bid_select(g, b, 1).unwrap(), 0.0);
            }
            candidate.insert(tri.cpl.marginal_price(g, 1).unwrap(), 0.0);
        }
        match separate(&splitted, &solver, &Default::default(), &candidate) {
            Separation::Feasibility { cut, rhs } => {
                // the cut must reject this candidate
                let lhs = cut.evaluate(&|v| {
                    candidate
                        .get(&splitted.from_master[&v])
                        .copied()
                        .unwrap_or(0.0)
                });
                assert!(
                    lhs < rhs - 1e-9,
                    "cut does not exclude the candidate: {lhs} vs {rhs}"
                );
            }
            _ => panic!("expected a feasibility cut"),
        }
    }
}
