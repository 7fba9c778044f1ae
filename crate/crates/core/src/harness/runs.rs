//! The two operating modes.
//!
//! Mode A (current practice): solve the commitment/dispatch problem with no
//! gas awareness, derive the plants' fuel demand from the dispatch, solve
//! the gas stage against it, price the zones from the balance duals, and
//! account the loss of committed plants whose bids turn out invalid — the
//! marginal violation times the scheduled output.
//!
//! Mode B (gas-aware): solve the single-level reformulation (decomposition
//! or monolithic oracle), then evaluate the realized gas stage and validity
//! slacks the same way; committed plants stay profitable by construction.

use crate::coupling::zonal_price;
use crate::gas::{build_gas_program, nodal_prices, restore_pressures, weymouth_residual};
use crate::harness::config::{Engine, RunConfig};
use crate::harness::data::TestSystem;
use crate::harness::report::{
    CommitmentRow, CostBreakdown, Mode, RunReport, Scenario, SolverStats, ValidityRow,
};
use crate::model::{SolveStatus, VarRef};
use crate::reform::{assemble_trilevel, reformulate, TriLevelProgram};
use crate::solver::{
    apply_eliminations, benders_solve, branch_and_bound, preprocess_invalid_bids, ConicSolver,
    InteriorPointSolver, SolveLimits,
};
use crate::stack::ModelStack;
use std::collections::BTreeMap;
use std::time::Instant;

#[derive(thiserror::Error, Debug)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Reform(#[from] crate::reform::ReformError),
    #[error(transparent)]
    Bnb(#[from] crate::solver::bnb::BnbError),
    #[error(transparent)]
    Benders(#[from] crate::solver::benders::BendersError),
    #[error(transparent)]
    Preprocess(#[from] crate::solver::preprocess::PreprocessError),
    #[error("{stage} stage is infeasible")]
    Infeasible { stage: String },
    #[error("solver hit its limits without an incumbent")]
    NoIncumbent,
}

struct GasStage {
    cost: f64,
    nodal: BTreeMap<(String, usize), f64>,
    zonal: BTreeMap<String, Vec<f64>>,
    shed: BTreeMap<String, Vec<f64>>,
    min_residual: f64,
    max_flowing_residual: f64,
}

/// Solves the gas stage against fixed plant consumption; prices come from
/// the balance duals, pressures are restored to the minimal profile before
/// residual reporting.
fn realized_gas_stage(
    system: &TestSystem,
    gamma: &BTreeMap<(usize, usize), f64>,
    solver: &dyn ConicSolver,
    limits: &SolveLimits,
) -> Result<GasStage, RunError> {
    let horizon = system.horizon;
    let (stack, vars) = build_gas_program(&system.gas, gamma, horizon)?;
    let form = stack.program.to_standard_form()?;
    let solution = solver.solve(&form, limits);
    if solution.status != SolveStatus::Optimal {
        return Err(RunError::Infeasible {
            stage: "gas".into(),
        });
    }
    let nodal = nodal_prices(&solution, &system.gas, horizon)?;
    let mut zonal = BTreeMap::new();
    for zone in &system.coupling.zones {
        let mut per_t = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            per_t.push(zonal_price(&nodal, zone, t)?);
        }
        zonal.insert(zone.id.clone(), per_t);
    }
    let mut shed = BTreeMap::new();
    for (ji, junction) in system.gas.junctions.iter().enumerate() {
        let per_t: Vec<f64> = (1..=horizon)
            .map(|t| solution.value(vars.shed(ji, t)))
            .collect();
        shed.insert(junction.id.clone(), per_t);
    }
    let restored = restore_pressures(&solution, &system.gas, &vars, horizon);
    let residuals = weymouth_residual(&|v| restored.value(v), &system.gas, &vars, horizon);
    let mut min_residual = f64::INFINITY;
    let mut max_flowing = 0.0f64;
    for (edge, t, resid) in &residuals {
        min_residual = min_residual.min(*resid);
        let ai = system
            .gas
            .edges
            .iter()
            .position(|e| e.id == *edge)
            .expect("edge exists");
        if restored.value(vars.flow(ai, *t)) > 1e-6 {
            max_flowing = max_flowing.max(*resid);
        }
    }
    if residuals.is_empty() {
        min_residual = 0.0;
    }
    Ok(GasStage {
        cost: solution.objective,
        nodal,
        zonal,
        shed,
        min_residual,
        max_flowing_residual: max_flowing,
    })
}

/// Plant fuel demand per junction implied by a dispatch, evaluated on the
/// exact quadratic with the online gate.
fn gamma_from_dispatch(
    system: &TestSystem,
    on: &dyn Fn(usize, usize) -> f64,
    output: &dyn Fn(usize, usize) -> f64,
) -> BTreeMap<(usize, usize), f64> {
    let mut gamma = BTreeMap::new();
    for link in &system.coupling.links {
        let g = system
            .power
            .generator_index(&link.generator)
            .expect("validated");
        let j = system
            .gas
            .junction_index(&link.junction)
            .expect("validated");
        for t in 1..=system.horizon {
            let fuel = link.heat_rate.fuel_for(output(g, t), on(g, t));
            *gamma.entry((j, t)).or_insert(0.0) += fuel;
        }
    }
    gamma
}

fn validity_rows(
    system: &TestSystem,
    zonal: &BTreeMap<String, Vec<f64>>,
    on: &dyn Fn(usize, usize) -> f64,
    output: &dyn Fn(usize, usize) -> f64,
    rho: &dyn Fn(usize, usize) -> f64,
) -> Vec<ValidityRow> {
    let mut rows = Vec::new();
    for link in &system.coupling.links {
        let g = system
            .power
            .generator_index(&link.generator)
            .expect("validated");
        for t in 1..=system.horizon {
            let committed = on(g, t) > 0.5;
            let p = output(g, t);
            let psi = zonal[&link.zone][t - 1];
            let mf = link.heat_rate.marginal_fuel(p);
            let r = rho(g, t);
            let profit_slack = link.alpha_markup * r - mf * psi;
            let loss = if committed {
                (-profit_slack).max(0.0) * p
            } else {
                0.0
            };
            rows.push(ValidityRow {
                generator: link.generator.clone(),
                period: t,
                committed,
                output: p,
                rho: r,
                psi,
                marginal_fuel: mf,
                alpha_markup: link.alpha_markup,
                profit_slack: if committed { profit_slack } else { 0.0 },
                loss,
            });
        }
    }
    rows
}

fn commitment_rows(
    system: &TestSystem,
    on: &dyn Fn(usize, usize) -> f64,
) -> Vec<CommitmentRow> {
    system
        .power
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| CommitmentRow {
            generator: gen.id.clone(),
            fuel: gen.fuel,
            zone: system
                .coupling
                .links
                .iter()
                .find(|l| l.generator == gen.id)
                .map(|l| l.zone.clone()),
            on: (1..=system.horizon)
                .map(|t| if on(g, t) > 0.5 { 1 } else { 0 })
                .collect(),
        })
        .collect()
}

/// Current practice: gas-blind commitment, then gas pricing, then loss
/// accounting for invalid bids.
pub fn run_baseline(system: &TestSystem, cfg: &RunConfig) -> Result<RunReport, RunError> {
    let started = Instant::now();
    let solver = InteriorPointSolver::new();
    let horizon = system.horizon;

    let mut stack = ModelStack::new();
    let uc = crate::power::build_uc_block(&mut stack, &system.power, horizon, &[])?;
    let ed = crate::power::build_ed_block(&mut stack, &system.power, horizon, &uc, &[])?;
    let obj_commit = stack.obj_commit.clone();
    let obj_power = stack.obj_power.clone();
    stack.program.add_objective(&obj_commit, 1.0)?;
    stack.program.add_objective(&obj_power, 1.0)?;

    let mut binaries = Vec::new();
    for g in 0..system.power.generators.len() {
        for t in 1..=horizon {
            binaries.push(uc.on(g, t));
            binaries.push(uc.start(g, t));
            binaries.push(uc.stop(g, t));
        }
    }
    let mip = crate::solver::MixedProgram {
        program: stack.program.clone(),
        binaries,
    };
    let out = branch_and_bound(&mip, &solver, &cfg.bnb_config())?;
    let sol = out.solution;
    match sol.status {
        SolveStatus::Optimal | SolveStatus::Limit if !sol.primal.is_empty() => {}
        SolveStatus::Infeasible => {
            return Err(RunError::Infeasible {
                stage: "power".into(),
            })
        }
        _ => return Err(RunError::NoIncumbent),
    }

    let on = |g: usize, t: usize| sol.value(uc.on(g, t)).round();
    let output = |g: usize, t: usize| sol.value(ed.output(g, t));
    // marginal bid price realized by the dispatch: the priciest bid in use
    let rho = |g: usize, t: usize| -> f64 {
        let gen = &system.power.generators[g];
        gen.bids
            .iter()
            .enumerate()
            .filter(|(b, _)| sol.value(ed.supply(g, *b, t)) > 1e-6)
            .map(|(_, bid)| bid.price)
            .fold(0.0, f64::max)
    };

    let gamma = gamma_from_dispatch(system, &on, &output);
    let gas = realized_gas_stage(system, &gamma, &solver, &SolveLimits::default())?;
    let validity = validity_rows(system, &gas.zonal, &on, &output, &rho);
    let loss: f64 = validity.iter().map(|r| r.loss).sum();

    let power_cost = obj_commit.evaluate(&|v: VarRef| sol.value(v))
        + obj_power.evaluate(&|v: VarRef| sol.value(v));

    Ok(RunReport {
        system: system.name.clone(),
        scenario: Scenario {
            eta_p: 1.0,
            eta_g: 1.0,
            mode: Mode::A,
            alpha: 1.0,
        },
        commitments: commitment_rows(system, &on),
        dispatch: dispatch_map(system, &output),
        nodal_gas_prices: nodal_map(system, &gas.nodal),
        zonal_gas_prices: gas.zonal.clone(),
        shed: gas.shed.clone(),
        weymouth_min_residual: gas.min_residual,
        weymouth_max_flowing_residual: gas.max_flowing_residual,
        validity,
        costs: CostBreakdown::new(power_cost, gas.cost, loss),
        stats: SolverStats {
            engine: "bnb".into(),
            objective: sol.objective,
            gap: sol.gap.max(0.0),
            iterations: 0,
            nodes: out.nodes,
            wall_s: started.elapsed().as_secs_f64(),
            eliminated_bids: 0,
        },
    })
}

/// Gas-aware run: single-level reformulation solved by the decomposition
/// (or the monolithic oracle), then the same realized-gas evaluation.
pub fn run_gna(system: &TestSystem, cfg: &RunConfig) -> Result<RunReport, RunError> {
    let started = Instant::now();
    let solver = InteriorPointSolver::new();
    let horizon = system.horizon;

    let tri = assemble_trilevel(
        &system.power,
        &system.gas,
        &system.coupling.links,
        &system.coupling.zones,
        system.validity_params(),
        horizon,
    )?;
    let mut p7 = reformulate(&tri, cfg.reform.alpha, &cfg.dual_bound_policy())?;

    let mut eliminated = Vec::new();
    if cfg.run.preprocess {
        eliminated = preprocess_invalid_bids(
            &system.power,
            &system.gas,
            &system.coupling.links,
            &system.coupling.zones,
            &system.validity_params(),
            horizon,
            &solver,
            &SolveLimits::default(),
        )?;
        apply_eliminations(&mut p7, &tri.uc, &system.power, &eliminated)?;
    }

    let (sol, engine, iterations, nodes) = match cfg.run.engine {
        Engine::Benders => {
            let out = benders_solve(&p7, &tri, &solver, &cfg.benders_config())?;
            let iters = out.iterations.len();
            (out.solution, "benders", iters, 0)
        }
        Engine::BranchAndBound => {
            let out = branch_and_bound(&p7.mip, &solver, &cfg.bnb_config())?;
            let nodes = out.nodes;
            (out.solution, "bnb", 0, nodes)
        }
    };
    match sol.status {
        SolveStatus::Optimal | SolveStatus::Limit if !sol.primal.is_empty() => {}
        SolveStatus::Infeasible => {
            return Err(RunError::Infeasible {
                stage: "gas-aware commitment".into(),
            })
        }
        _ => return Err(RunError::NoIncumbent),
    }

    let on = |g: usize, t: usize| sol.value(tri.uc.on(g, t)).round();
    let output = |g: usize, t: usize| sol.value(tri.ed.output(g, t));
    let rho = |g: usize, t: usize| -> f64 {
        tri.cpl
            .marginal_price(g, t)
            .map(|v| sol.value(v))
            .unwrap_or(0.0)
    };

    let gamma = gamma_from_dispatch(system, &on, &output);
    let gas = realized_gas_stage(system, &gamma, &solver, &SolveLimits::default())?;
    let mut validity = validity_rows(system, &gas.zonal, &on, &output, &rho);
    // sub-tolerance numerical noise reads as zero; a real violation stays
    for row in &mut validity {
        if row.loss < 1e-6 {
            row.loss = 0.0;
        }
    }
    let loss: f64 = validity.iter().map(|r| r.loss).sum();
    if loss > 0.0 {
        log::warn!(
            "gas-aware run reports positive invalid-bid loss {loss}; \
             anticipated and realized prices disagree"
        );
    }

    let power_cost = tri.stack.obj_commit.evaluate(&|v: VarRef| sol.value(v))
        + tri.stack.obj_power.evaluate(&|v: VarRef| sol.value(v));

    Ok(RunReport {
        system: system.name.clone(),
        scenario: Scenario {
            eta_p: 1.0,
            eta_g: 1.0,
            mode: Mode::B,
            alpha: cfg.reform.alpha,
        },
        commitments: commitment_rows(system, &on),
        dispatch: dispatch_map(system, &output),
        nodal_gas_prices: nodal_map(system, &gas.nodal),
        zonal_gas_prices: gas.zonal.clone(),
        shed: gas.shed.clone(),
        weymouth_min_residual: gas.min_residual,
        weymouth_max_flowing_residual: gas.max_flowing_residual,
        validity,
        costs: CostBreakdown::new(power_cost, gas.cost, loss),
        stats: SolverStats {
            engine: engine.into(),
            objective: sol.objective,
            gap: sol.gap.max(0.0),
            iterations,
            nodes,
            wall_s: started.elapsed().as_secs_f64(),
            eliminated_bids: eliminated.len(),
        },
    })
}

/// The assembled three-stage context for a system (exposed for the oracle
/// subcommand and the acceptance suite).
pub fn trilevel_of(system: &TestSystem) -> Result<TriLevelProgram, RunError> {
    Ok(assemble_trilevel(
        &system.power,
        &system.gas,
        &system.coupling.links,
        &system.coupling.zones,
        system.validity_params(),
        system.horizon,
    )?)
}

fn dispatch_map(
    system: &TestSystem,
    output: &dyn Fn(usize, usize) -> f64,
) -> BTreeMap<String, Vec<f64>> {
    system
        .power
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| {
            (
                gen.id.clone(),
                (1..=system.horizon).map(|t| output(g, t)).collect(),
            )
        })
        .collect()
}

fn nodal_map(
    system: &TestSystem,
    nodal: &BTreeMap<(String, usize), f64>,
) -> BTreeMap<String, Vec<f64>> {
    let mut out = BTreeMap::new();
    for j in &system.gas.junctions {
        let per_t: Vec<f64> = (1..=system.horizon)
            .map(|t| nodal.get(&(j.id.clone(), t)).copied().unwrap_or(0.0))
            .collect();
        out.insert(j.id.clone(), per_t);
    }
    out
}

/// Attaches the actual scenario to a report produced on a scaled system.
pub fn with_scenario(mut report: RunReport, eta_p: f64, eta_g: f64) -> RunReport {
    report.scenario.eta_p = eta_p;
    report.scenario.eta_g = eta_g;
    report
}
