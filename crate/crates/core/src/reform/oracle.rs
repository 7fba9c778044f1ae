//! Brute-force oracle for the three-stage chain, and the weight sweep that
//! certifies the single-level approximation against it.
//!
//! The oracle enumerates every commitment assignment (on/off bits and bid
//! selections; switch indicators are derived), filters by the commitment
//! rows, then solves the two inner stages lexicographically: dispatch cost
//! first with gas feasibility in scope, then gas cost with the dispatch
//! frozen. Gas balance duals of the second solve price the zones, and the
//! validity requirement is evaluated at those prices. The best feasible
//! assignment under the unweighted leader objective is the reference
//! answer.

use crate::coupling::zonal_price;
use crate::gas::nodal_prices;
use crate::model::{Sense, SolveStatus, VarRef};
use crate::reform::{reformulate, DualBoundPolicy, TriLevelProgram};
use crate::solver::{branch_and_bound, BnbConfig, ConicSolver, SolveLimits};
use crate::stack::VarRole;
use std::collections::BTreeMap;

#[derive(thiserror::Error, Debug)]
pub enum OracleError {
    #[error("enumeration needs {0} bits, above the configured cap {1}")]
    TooManyBits(usize, usize),
    #[error("no commitment assignment is feasible for the full chain")]
    AllInfeasible,
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Reform(#[from] crate::reform::ReformError),
    #[error(transparent)]
    Bnb(#[from] crate::solver::bnb::BnbError),
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    /// Maximum number of enumerated bits (on/off plus bid selections).
    pub enumeration_cap: usize,
    pub limits: SolveLimits,
    /// Validity slack tolerated at the realized prices.
    pub validity_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            enumeration_cap: 8,
            limits: SolveLimits::default(),
            validity_tol: 1e-6,
        }
    }
}

/// Reference answer from full enumeration.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// Unweighted leader objective: commitment cost plus dispatch cost.
    pub leader_objective: f64,
    /// Gas-stage cost of the follower's best response.
    pub gas_objective: f64,
    /// Commitment assignment (binaries and aux) of the optimum.
    pub commitment: BTreeMap<VarRef, f64>,
    /// Dispatch-stage column values of the optimum.
    pub x_p: BTreeMap<VarRef, f64>,
    /// Assignments that survived the commitment rows.
    pub commitment_feasible: usize,
    /// Assignments feasible for the whole chain (validity included).
    pub chain_feasible: usize,
    pub enumerated: usize,
}

struct ChainOutcome {
    leader_objective: f64,
    gas_objective: f64,
    x_p: BTreeMap<VarRef, f64>,
}

/// Evaluates one commitment through the lexicographic pair. `None` when
/// dispatch is infeasible or validity fails at the realized prices.
fn evaluate_chain(
    tri: &TriLevelProgram,
    solver: &dyn ConicSolver,
    cfg: &OracleConfig,
    p13: &crate::model::StandardForm,
    p14: &crate::model::StandardForm,
    commitment: &BTreeMap<VarRef, f64>,
) -> Option<ChainOutcome> {
    let fixings: Vec<(VarRef, f64)> = commitment.iter().map(|(&v, &x)| (v, x)).collect();
    let first = solver.solve_fixed(p13, &cfg.limits, &fixings);
    if first.status != SolveStatus::Optimal {
        return None;
    }

    // freeze the dispatch, re-optimize the gas stage alone
    let mut frozen = fixings.clone();
    let mut x_p = BTreeMap::new();
    for block in tri.stack.blocks_with_role(VarRole::Power) {
        for i in 0..tri.stack.program.block(block).cone.dim {
            let v = VarRef { block, index: i };
            let x = first.value(v);
            x_p.insert(v, x);
            frozen.push((v, x));
        }
    }
    let second = solver.solve_fixed(p14, &cfg.limits, &frozen);
    if second.status != SolveStatus::Optimal {
        return None;
    }

    let prices = nodal_prices(&second, &tri.gas, tri.horizon).ok()?;
    for link in &tri.links {
        let g = tri.power.generator_index(&link.generator)?;
        let gen = &tri.power.generators[g];
        let zone = tri.zones.iter().find(|z| z.id == link.zone)?;
        let big_m = tri.params.big_m(gen.p_max, &link.heat_rate);
        for t in 1..=tri.horizon {
            let psi = zonal_price(&prices, zone, t).ok()?;
            let on = commitment.get(&tri.uc.on(g, t)).copied().unwrap_or(0.0);
            let rho = commitment
                .get(&tri.cpl.marginal_price(g, t)?)
                .copied()
                .unwrap_or(0.0);
            // same envelope as the single-level rows: marginal fuel at p_max
            let slack = link.alpha_markup * rho + big_m * (1.0 - on)
                - link.heat_rate.marginal_fuel(gen.p_max) * psi;
            if slack < -cfg.validity_tol * big_m.max(1.0) {
                return None;
            }
        }
    }

    let leader = tri
        .stack
        .obj_commit
        .evaluate(&|v| commitment.get(&v).copied().unwrap_or(0.0))
        + first.objective;
    Some(ChainOutcome {
        leader_objective: leader,
        gas_objective: second.objective,
        x_p,
    })
}

/// Enumerates all commitments and returns the best chain-feasible one.
pub fn solve_by_enumeration(
    tri: &TriLevelProgram,
    solver: &dyn ConicSolver,
    cfg: &OracleConfig,
) -> Result<OracleSolution, OracleError> {
    let horizon = tri.horizon;
    let n_gens = tri.power.generators.len();

    // enumerated bits: on/off per (gen, t), then bid selections per plant
    let mut bits: Vec<VarRef> = Vec::new();
    for g in 0..n_gens {
        for t in 1..=horizon {
            bits.push(tri.uc.on(g, t));
        }
    }
    for &g in &tri.gfpps {
        for b in 0..tri.power.generators[g].bids.len() {
            for t in 1..=horizon {
                bits.push(tri.uc.bid_select(g, b, t).expect("gfpp has selections"));
            }
        }
    }
    if bits.len() > cfg.enumeration_cap {
        return Err(OracleError::TooManyBits(bits.len(), cfg.enumeration_cap));
    }

    let mut p13_prog = tri.stack.program.clone();
    p13_prog.add_objective(&tri.stack.obj_power, 1.0)?;
    let p13 = p13_prog.to_standard_form()?;
    let mut p14_prog = tri.stack.program.clone();
    p14_prog.add_objective(&tri.stack.obj_gas, 1.0)?;
    let p14 = p14_prog.to_standard_form()?;

    let mut best: Option<OracleSolution> = None;
    let mut commitment_feasible = 0usize;
    let mut chain_feasible = 0usize;
    let total = 1usize << bits.len();

    for mask in 0..total {
        let mut assign: BTreeMap<VarRef, f64> = BTreeMap::new();
        for (i, &v) in bits.iter().enumerate() {
            assign.insert(v, ((mask >> i) & 1) as f64);
        }
        // derived switch indicators and aux values
        for (g, gen) in tri.power.generators.iter().enumerate() {
            let u0 = if gen.initial_on { 1.0 } else { 0.0 };
            let mut on_path = Vec::with_capacity(horizon);
            for t in 1..=horizon {
                let u = assign[&tri.uc.on(g, t)];
                let prev = if t == 1 { u0 } else { on_path[t - 2] };
                assign.insert(tri.uc.start(g, t), (u - prev).max(0.0));
                assign.insert(tri.uc.stop(g, t), (prev - u).max(0.0));
                on_path.push(u);
            }
            for t in 1..=horizon {
                assign.insert(
                    tri.uc.startup_cost(g, t),
                    crate::power::startup_cost_of(gen, &on_path, t),
                );
            }
        }
        for &g in &tri.gfpps {
            let gen = &tri.power.generators[g];
            for t in 1..=horizon {
                let mut rho = 0.0;
                let nb = gen.bids.len();
                for b in 0..nb {
                    let w = assign[&tri.uc.bid_select(g, b, t).expect("bit")];
                    let w_next = if b + 1 < nb {
                        assign[&tri.uc.bid_select(g, b + 1, t).expect("bit")]
                    } else {
                        0.0
                    };
                    rho += gen.bids[b].price * (w - w_next);
                }
                if let Some(v) = tri.cpl.marginal_price(g, t) {
                    assign.insert(v, rho);
                }
            }
        }

        // commitment-stage feasibility by direct evaluation
        let ok = tri.commitment_rows.iter().all(|&r| {
            let row = tri.stack.program.row(r);
            let lhs = row
                .expr
                .evaluate(&|v| assign.get(&v).copied().unwrap_or(0.0));
            match row.sense {
                Sense::Ge => lhs >= row.rhs - 1e-9,
                Sense::Eq => (lhs - row.rhs).abs() <= 1e-9,
            }
        });
        if !ok {
            continue;
        }
        commitment_feasible += 1;

        if let Some(outcome) = evaluate_chain(tri, solver, cfg, &p13, &p14, &assign) {
            chain_feasible += 1;
            let better = match &best {
                None => true,
                Some(b) => outcome.leader_objective < b.leader_objective - 1e-9,
            };
            if better {
                best = Some(OracleSolution {
                    leader_objective: outcome.leader_objective,
                    gas_objective: outcome.gas_objective,
                    commitment: assign.clone(),
                    x_p: outcome.x_p,
                    commitment_feasible: 0,
                    chain_feasible: 0,
                    enumerated: 0,
                });
            }
        }
    }

    match best {
        Some(mut b) => {
            b.commitment_feasible = commitment_feasible;
            b.chain_feasible = chain_feasible;
            b.enumerated = total;
            Ok(b)
        }
        None => Err(OracleError::AllInfeasible),
    }
}

#[derive(Debug, Clone)]
pub struct AlphaRow {
    pub alpha: f64,
    /// Weighted objective of the single-level solve.
    pub objective: f64,
    /// Unweighted leader objective recovered from the solution.
    pub leader_objective: f64,
    /// |leader objective - oracle leader objective|.
    pub leader_gap: f64,
    /// Sup-norm distance of the dispatch columns from the oracle's.
    pub xp_distance: f64,
}

/// Solves the single-level program at each weight and reports convergence
/// to the enumeration oracle.
pub fn alpha_sweep(
    tri: &TriLevelProgram,
    alphas: &[f64],
    solver: &dyn ConicSolver,
    oracle_cfg: &OracleConfig,
    bnb_cfg: &BnbConfig,
) -> Result<(OracleSolution, Vec<AlphaRow>), OracleError> {
    let reference = solve_by_enumeration(tri, solver, oracle_cfg)?;
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let p7 = reformulate(tri, alpha, &DualBoundPolicy::default())?;
        let out = branch_and_bound(&p7.mip, solver, bnb_cfg)?;
        let sol = out.solution;
        let value_of = |v: VarRef| sol.value(v);
        let leader =
            tri.stack.obj_commit.evaluate(&value_of) + tri.stack.obj_power.evaluate(&value_of);
        let mut dist: f64 = 0.0;
        for (&v, &x_ref) in &reference.x_p {
            dist = dist.max((sol.value(v) - x_ref).abs());
        }
        rows.push(AlphaRow {
            alpha,
            objective: sol.objective,
            leader_objective: leader,
            leader_gap: (leader - reference.leader_objective).abs(),
            xp_distance: dist,
        });
    }
    Ok((reference, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reform::assemble_trilevel;
    use crate::reform::tests::{toy_system, toy_trilevel};
    use crate::solver::InteriorPointSolver;

    #[test]
    fn enumeration_cap_is_enforced() {
        let tri = toy_trilevel();
        let cfg = OracleConfig {
            enumeration_cap: 3,
            ..OracleConfig::default()
        };
        assert!(matches!(
            solve_by_enumeration(&tri, &InteriorPointSolver::new(), &cfg),
            Err(OracleError::TooManyBits(4, 3))
        ));
    }

    #[test]
    fn oracle_picks_the_gas_plant_when_gas_is_cheap() {
        let tri = toy_trilevel();
        let oracle =
            solve_by_enumeration(&tri, &InteriorPointSolver::new(), &OracleConfig::default())
                .unwrap();
        assert_eq!(oracle.enumerated, 16);
        // load 4 from the gas plant with both bids open: commitment cost
        // 2 (no-load) + 4 (startup), dispatch 3*18 + 1*24 = 78 -> 84
        assert!(
            (oracle.leader_objective - 84.0).abs() < 1e-4,
            "leader {}",
            oracle.leader_objective
        );
        assert!(oracle.commitment[&tri.uc.on(0, 1)] > 0.5);
    }

    #[test]
    fn weight_sweep_converges_to_the_oracle() {
        let tri = toy_trilevel();
        let (reference, rows) = alpha_sweep(
            &tri,
            &[0.9, 0.99, 0.999],
            &InteriorPointSolver::new(),
            &OracleConfig::default(),
            &BnbConfig::default(),
        )
        .unwrap();
        assert!(reference.chain_feasible > 0);
        for pair in rows.windows(2) {
            assert!(
                pair[1].leader_gap <= pair[0].leader_gap + 1e-9,
                "gap must not grow: {pair:?}"
            );
        }
        let last = rows.last().unwrap();
        assert!(
            last.leader_gap <= 1e-4 * (1.0 + reference.leader_objective.abs()),
            "gap at 0.999 is {}",
            last.leader_gap
        );
    }

    #[test]
    fn inactive_validity_rows_leave_the_leader_untouched() {
        // demand low enough that prices stay on the cheap slope everywhere:
        // the validity block never binds and every weight recovers the
        // leader optimum exactly
        let (power, mut gas, links, zones) = toy_system();
        gas.junctions[1].demand = vec![1.0];
        let tri = assemble_trilevel(&power, &gas, &links, &zones, Default::default(), 1).unwrap();
        let (reference, rows) = alpha_sweep(
            &tri,
            &[0.9, 0.99, 0.999],
            &InteriorPointSolver::new(),
            &OracleConfig::default(),
            &BnbConfig::default(),
        )
        .unwrap();
        for row in &rows {
            assert!(
                row.leader_gap <= 1e-5 * (1.0 + reference.leader_objective.abs()),
                "alpha {}: gap {}",
                row.alpha,
                row.leader_gap
            );
        }
    }
}
