//! Bid preprocessing: gas prices without any plant load are a floor on the
//! zonal prices, so a bid whose price cannot cover the marginal fuel cost
//! even at minimum output and floor prices can never be selected validly.
//! Such bids are fixed off before the decomposition starts.

use crate::coupling::{zonal_price, BidValidityParams, GfppLink, PriceZone};
use crate::gas::{build_gas_program, nodal_prices, GasSystem};
use crate::model::{LinearExpr, Sense, SolveStatus};
use crate::power::PowerSystem;
use crate::reform::SingleLevelMisocp;
use crate::solver::{ConicSolver, SolveLimits};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct EliminatedBid {
    pub generator: String,
    pub bid: usize,
    pub period: usize,
    /// Zonal price floor that killed the bid.
    pub price_floor: f64,
}

#[derive(thiserror::Error, Debug)]
pub enum PreprocessError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("gas system is infeasible with zero plant load; the data is inconsistent: {0:?}")]
    BaseGasInfeasible(SolveStatus),
}

/// Solves the gas stage with zero plant consumption and eliminates every
/// bid that fails validity against the resulting zonal price floors at
/// minimum output.
#[allow(clippy::too_many_arguments)]
pub fn preprocess_invalid_bids(
    power: &PowerSystem,
    gas: &GasSystem,
    links: &[GfppLink],
    zones: &[PriceZone],
    params: &BidValidityParams,
    horizon: usize,
    solver: &dyn ConicSolver,
    limits: &SolveLimits,
) -> Result<Vec<EliminatedBid>, PreprocessError> {
    let empty = BTreeMap::new();
    let (stack, _vars) = build_gas_program(gas, &empty, horizon)?;
    let form = stack.program.to_standard_form()?;
    let sol = solver.solve(&form, limits);
    if sol.status != SolveStatus::Optimal {
        return Err(PreprocessError::BaseGasInfeasible(sol.status));
    }
    let prices = nodal_prices(&sol, gas, horizon)?;

    let mut eliminated = Vec::new();
    for link in links {
        let Some(g) = power.generator_index(&link.generator) else {
            continue;
        };
        let gen = &power.generators[g];
        let Some(zone) = zones.iter().find(|z| z.id == link.zone) else {
            continue;
        };
        let floor_fuel = link.heat_rate.marginal_fuel(gen.p_min);
        let _ = params;
        for t in 1..=horizon {
            let psi_floor = zonal_price(&prices, zone, t)?;
            for (b, bid) in gen.bids.iter().enumerate() {
                if link.alpha_markup * bid.price < floor_fuel * psi_floor - 1e-9 {
                    eliminated.push(EliminatedBid {
                        generator: link.generator.clone(),
                        bid: b,
                        period: t,
                        price_floor: psi_floor,
                    });
                }
            }
        }
    }
    Ok(eliminated)
}

/// Fixes the eliminated selections to zero in the single-level program.
/// The rows are commitment-stage, so the decomposition master keeps them.
pub fn apply_eliminations(
    p7: &mut SingleLevelMisocp,
    uc: &crate::power::UcVars,
    power: &PowerSystem,
    eliminated: &[EliminatedBid],
) -> Result<(), crate::model::ModelError> {
    for e in eliminated {
        let Some(g) = power.generator_index(&e.generator) else {
            continue;
        };
        let Some(w) = uc.bid_select(g, e.bid, e.period) else {
            continue;
        };
        let tag = format!("pre:{}:{}:{}", e.generator, e.bid, e.period);
        p7.mip
            .program
            .add_row(&tag, LinearExpr::var(w), Sense::Eq, 0.0)?;
        p7.master_row_tags.push(tag);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reform::tests::{toy_system, toy_trilevel};
    use crate::reform::{assemble_trilevel, reformulate, DualBoundPolicy};
    use crate::solver::{branch_and_bound, BnbConfig, InteriorPointSolver};

    #[test]
    fn cheap_gas_eliminates_nothing() {
        let (power, gas, links, zones) = toy_system();
        let out = preprocess_invalid_bids(
            &power,
            &gas,
            &links,
            &zones,
            &Default::default(),
            1,
            &InteriorPointSolver::new(),
            &Default::default(),
        )
        .unwrap();
        assert!(out.is_empty(), "unexpected eliminations: {out:?}");
    }

    #[test]
    fn arithmetic_elimination_rule() {
        // beta = 1 against a floor of 3 with marginal fuel 2 at p_min:
        // 1 < 6 eliminates the bid
        let (mut power, mut gas, mut links, zones) = toy_system();
        power.generators[0].bids[0].price = 1.0;
        links[0].heat_rate.h1 = 2.0;
        links[0].heat_rate.h2 = 0.0;
        power.generators[0].p_min = 0.0;
        // price the cheap segment at 3.0 so the floor is 3.0
        gas.junctions[0].supply_segments[0].slope = 3.0;
        gas.junctions[0].supply_segments[1].slope = 3.0;
        let out = preprocess_invalid_bids(
            &power,
            &gas,
            &links,
            &zones,
            &Default::default(),
            1,
            &InteriorPointSolver::new(),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bid, 0);
        assert!((out[0].price_floor - 3.0).abs() < 1e-5);
    }

    #[test]
    fn elimination_preserves_the_optimum() {
        // under heavy gas stress the plant is invalid anyway: fixing its
        // bids off cannot change the optimal objective
        let (power, mut gas, links, zones) = toy_system();
        gas.junctions[1].demand = vec![12.0];
        let tri = assemble_trilevel(&power, &gas, &links, &zones, Default::default(), 1).unwrap();
        let solver = InteriorPointSolver::new();
        let plain = reformulate(&tri, 0.99, &DualBoundPolicy::default()).unwrap();
        let base = branch_and_bound(&plain.mip, &solver, &BnbConfig::default()).unwrap();

        let eliminated = preprocess_invalid_bids(
            &power,
            &gas,
            &links,
            &zones,
            &Default::default(),
            1,
            &solver,
            &Default::default(),
        )
        .unwrap();
        assert!(!eliminated.is_empty());
        let mut pruned = reformulate(&tri, 0.99, &DualBoundPolicy::default()).unwrap();
        apply_eliminations(&mut pruned, &tri.uc, &power, &eliminated).unwrap();
        let out = branch_and_bound(&pruned.mip, &solver, &BnbConfig::default()).unwrap();
        assert!(
            (out.solution.objective - base.solution.objective).abs()
                <= 1e-6 * base.solution.objective.abs().max(1.0),
            "pruned {} vs base {}",
            out.solution.objective,
            base.solution.objective
        );
    }

    #[test]
    fn toy_trilevel_smoke() {
        // base toy: uncongested floor prices keep every bid
        let tri = toy_trilevel();
        let out = preprocess_invalid_bids(
            &tri.power,
            &tri.gas,
            &tri.links,
            &tri.zones,
            &tri.params,
            1,
            &InteriorPointSolver::new(),
            &Default::default(),
        )
        .unwrap();
        assert!(out.is_empty());
    }
}
