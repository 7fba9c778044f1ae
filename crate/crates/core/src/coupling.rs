//! Physical and economic coupling between the power and gas systems.
//!
//! Gas-fueled plants consume fuel per a quadratic heat-rate curve (the
//! quadratic is convexified onto a cone, safe because gas cost increases in
//! consumption); their bid ladders carry selection binaries so the marginal
//! bid price is an affine function of the selection; zonal gas prices are
//! averages of nodal balance duals; and bid-validity rows keep a committed
//! plant's marginal fuel cost within a markup of its marginal bid price.

use crate::gas::{GasSystem, GasVars};
use crate::model::{BlockId, ConeKind, ConicProgram, LinearExpr, ModelError, Sense, VarRef};
use crate::power::{Diagnostic, EdVars, Fuel, PowerSystem, UcVars};
use crate::stack::{ModelStack, RowRole, VarRole};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Fuel use in gas units for output `p`: `h2 p² + h1 p + h0` while online.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HeatRateCurve {
    pub h0: f64,
    pub h1: f64,
    pub h2: f64,
}

impl HeatRateCurve {
    pub fn fuel_for(&self, p: f64, online: f64) -> f64 {
        self.h2 * p * p + self.h1 * p + self.h0 * online
    }

    /// Marginal fuel use at output `p` (d fuel / d p).
    pub fn marginal_fuel(&self, p: f64) -> f64 {
        2.0 * self.h2 * p + self.h1
    }
}

/// Gas pricing zone: member junctions plus an optional averaging subset
/// (defaults to all members). Zones need not partition the junction set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceZone {
    pub id: String,
    pub junctions: Vec<String>,
    #[serde(default)]
    pub averaging: Option<Vec<String>>,
}

impl PriceZone {
    pub fn averaging_set(&self) -> &[String] {
        self.averaging.as_deref().unwrap_or(&self.junctions)
    }
}

/// Validity parameters. The deactivation constant is always computed as
/// `price_cap * marginal_fuel(p_max)`, never hand-entered.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BidValidityParams {
    /// Cap on credible gas prices ($/unit), sizing the big-M.
    pub price_cap: f64,
}

impl Default for BidValidityParams {
    fn default() -> Self {
        BidValidityParams { price_cap: 200.0 }
    }
}

impl BidValidityParams {
    pub fn big_m(&self, p_max: f64, curve: &HeatRateCurve) -> f64 {
        self.price_cap * (2.0 * p_max * curve.h2 + curve.h1)
    }
}

/// One gas-fueled plant: its generator, bus, fuel junction, pricing zone,
/// heat rate, and markup tolerance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GfppLink {
    pub generator: String,
    pub bus: String,
    pub junction: String,
    pub zone: String,
    pub heat_rate: HeatRateCurve,
    /// Allowed ratio of fuel expense to marginal bid price.
    #[serde(default = "default_markup")]
    pub alpha_markup: f64,
}

fn default_markup() -> f64 {
    1.0
}

pub fn validate_links(
    links: &[GfppLink],
    power: &PowerSystem,
    gas: &GasSystem,
    zones: &[PriceZone],
) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for link in links {
        match power.generator_index(&link.generator) {
            None => diags.push(Diagnostic::error(format!(
                "link `{}`: unknown generator",
                link.generator
            ))),
            Some(g) => {
                let gen = &power.generators[g];
                if gen.fuel != Fuel::Gas {
                    diags.push(Diagnostic::error(format!(
                        "link `{}`: generator is not gas-fueled",
                        link.generator
                    )));
                }
                if gen.bus != link.bus {
                    diags.push(Diagnostic::error(format!(
                        "link `{}`: bus `{}` does not match the generator's bus `{}`",
                        link.generator, link.bus, gen.bus
                    )));
                }
            }
        }
        if gas.junction_index(&link.junction).is_none() {
            diags.push(Diagnostic::error(format!(
                "link `{}`: unknown junction `{}`",
                link.generator, link.junction
            )));
        }
        match zones.iter().find(|z| z.id == link.zone) {
            None => diags.push(Diagnostic::error(format!(
                "link `{}`: unknown zone `{}`",
                link.generator, link.zone
            ))),
            Some(z) => {
                if !z.junctions.iter().any(|j| *j == link.junction) {
                    diags.push(Diagnostic::error(format!(
                        "link `{}`: junction `{}` is not a member of zone `{}`",
                        link.generator, link.junction, link.zone
                    )));
                }
            }
        }
        if link.heat_rate.h2 < 0.0 {
            diags.push(Diagnostic::error(format!(
                "link `{}`: heat-rate curvature must be nonnegative",
                link.generator
            )));
        }
        if link.alpha_markup <= 0.0 {
            diags.push(Diagnostic::error(format!(
                "link `{}`: alpha markup must be positive",
                link.generator
            )));
        }
    }
    for zone in zones {
        for j in zone.averaging_set() {
            if gas.junction_index(j).is_none() {
                diags.push(Diagnostic::error(format!(
                    "zone `{}`: unknown junction `{j}`",
                    zone.id
                )));
            }
        }
        if zone.averaging_set().is_empty() {
            diags.push(Diagnostic::error(format!(
                "zone `{}`: empty averaging set",
                zone.id
            )));
        }
    }
    diags
}

/// Handles created by the coupling builders.
#[derive(Debug, Clone, Default)]
pub struct CouplingVars {
    /// Generator index -> per-period fuel-use block (gas stage).
    pub fuel_use: BTreeMap<usize, BlockId>,
    /// Generator index -> per-period online echo (power-stage copy of `u`).
    pub online_echo: BTreeMap<usize, BlockId>,
    /// Generator index -> per-period marginal-bid-price block.
    pub marginal_price: BTreeMap<usize, BlockId>,
}

impl CouplingVars {
    pub fn fuel_use(&self, g: usize, t: usize) -> Option<VarRef> {
        self.fuel_use.get(&g).map(|&b| VarRef {
            block: b,
            index: t - 1,
        })
    }
    pub fn online_echo(&self, g: usize, t: usize) -> Option<VarRef> {
        self.online_echo.get(&g).map(|&b| VarRef {
            block: b,
            index: t - 1,
        })
    }
    pub fn marginal_price(&self, g: usize, t: usize) -> Option<VarRef> {
        self.marginal_price.get(&g).map(|&b| VarRef {
            block: b,
            index: t - 1,
        })
    }

    pub fn merge(&mut self, other: CouplingVars) {
        self.fuel_use.extend(other.fuel_use);
        self.online_echo.extend(other.online_echo);
        self.marginal_price.extend(other.marginal_price);
    }
}

/// Ties each coupled junction's consumption variable to the plants feeding
/// from it: per plant, fuel use dominates the (convexified) heat-rate
/// curve; per junction, consumption dominates the sum of plant fuel uses.
/// The curve's constant term is gated by an online echo variable — a
/// dispatch-stage copy of the commitment binary — so gas rows never touch
/// binaries directly.
///
/// Tags: `echo:lo|hi:{g}:{t}` echo window (dispatch rows), `hr:r1|r2|r3` or
/// `hr:aff:{g}:{t}` heat-rate cone/affine rows, `gam:{j}:{t}` junction
/// aggregation (gas rows).
#[allow(clippy::too_many_arguments)]
pub fn gas_demand_rows(
    stack: &mut ModelStack,
    power: &PowerSystem,
    gas: &GasSystem,
    links: &[GfppLink],
    uc: &UcVars,
    ed: &EdVars,
    gas_vars: &GasVars,
    horizon: usize,
) -> Result<CouplingVars, ModelError> {
    let mut vars = CouplingVars::default();
    let mut by_junction: BTreeMap<usize, Vec<usize>> = BTreeMap::new();

    for link in links {
        let g = power.generator_index(&link.generator).ok_or_else(|| {
            ModelError::NonFinite(format!("unknown generator {}", link.generator))
        })?;
        if power.generators[g].fuel != Fuel::Gas {
            return Err(ModelError::NonFinite(format!(
                "generator `{}` is not gas-fueled",
                link.generator
            )));
        }
        let j = gas
            .junction_index(&link.junction)
            .ok_or_else(|| ModelError::NonFinite(format!("unknown junction {}", link.junction)))?;
        by_junction.entry(j).or_default().push(g);

        let echo = stack.add_block(
            &format!("cpl:online:{}", link.generator),
            horizon,
            ConeKind::Nonneg,
            VarRole::Power,
        )?;
        let fuel = stack.add_block(
            &format!("cpl:fuel:{}", link.generator),
            horizon,
            ConeKind::Nonneg,
            VarRole::Gas,
        )?;
        vars.online_echo.insert(g, echo);
        vars.fuel_use.insert(g, fuel);

        let curve = link.heat_rate;
        for t in 1..=horizon {
            let omega = VarRef {
                block: echo,
                index: t - 1,
            };
            let fuel_t = VarRef {
                block: fuel,
                index: t - 1,
            };
            // echo window as two inequalities, so both dispatch rows carry
            // sign-constrained duals
            stack.add_row(
                &format!("echo:lo:{}:{t}", link.generator),
                LinearExpr::var(omega).term(uc.on(g, t), -1.0),
                Sense::Ge,
                0.0,
                RowRole::Dispatch,
            )?;
            stack.add_row(
                &format!("echo:hi:{}:{t}", link.generator),
                LinearExpr::var(uc.on(g, t)).term(omega, -1.0),
                Sense::Ge,
                0.0,
                RowRole::Dispatch,
            )?;

            let p = ed.output(g, t);
            if curve.h2 > 0.0 {
                // fuel - h1 p - h0 ω >= h2 p² on the cone (δ+1, δ-1, 2√h2 p)
                let cone = stack.add_block(
                    &format!("hrc:{}:{t}", link.generator),
                    3,
                    ConeKind::SecondOrder,
                    VarRole::Gas,
                )?;
                let c = |i: usize| VarRef {
                    block: cone,
                    index: i,
                };
                let delta = || {
                    LinearExpr::var(fuel_t)
                        .term(p, -curve.h1)
                        .term(omega, -curve.h0)
                };
                stack.add_row(
                    &format!("hr:r1:{}:{t}", link.generator),
                    delta().term(c(0), -1.0),
                    Sense::Eq,
                    -1.0,
                    RowRole::Gas,
                )?;
                stack.add_row(
                    &format!("hr:r2:{}:{t}", link.generator),
                    delta().term(c(1), -1.0),
                    Sense::Eq,
                    1.0,
                    RowRole::Gas,
                )?;
                stack.add_row(
                    &format!("hr:r3:{}:{t}", link.generator),
                    LinearExpr::new()
                        .term(p, 2.0 * curve.h2.sqrt())
                        .term(c(2), -1.0),
                    Sense::Eq,
                    0.0,
                    RowRole::Gas,
                )?;
            } else {
                stack.add_row(
                    &format!("hr:aff:{}:{t}", link.generator),
                    LinearExpr::var(fuel_t)
                        .term(p, -curve.h1)
                        .term(omega, -curve.h0),
                    Sense::Ge,
                    0.0,
                    RowRole::Gas,
                )?;
            }
        }
    }

    for (j, gens) in &by_junction {
        for t in 1..=horizon {
            let gamma = gas_vars.gfpp_use(*j, t).ok_or_else(|| {
                ModelError::NonFinite(format!(
                    "junction `{}` was not built in coupled mode",
                    gas.junctions[*j].id
                ))
            })?;
            let mut expr = LinearExpr::var(gamma);
            for &g in gens {
                expr.add_term(vars.fuel_use(g, t).expect("fuel block exists"), -1.0);
            }
            stack.add_row(
                &format!("gam:{}:{t}", gas.junctions[*j].id),
                expr,
                Sense::Ge,
                0.0,
                RowRole::Gas,
            )?;
        }
    }

    Ok(vars)
}

/// Bid-selection logic for the listed gas plants: a bid may carry supply
/// only when selected, selection requires commitment (linked in the
/// commitment block), the next bid opens only when the previous is fully
/// used, and the marginal bid price telescopes over the selection.
///
/// Tags: `bidw:{g}:{b}:{t}` selected-bid cap, `bidfull:{g}:{b}:{t}`
/// fill-order, `rho:{g}:{t}` marginal-price definition.
pub fn bid_logic_rows(
    stack: &mut ModelStack,
    power: &PowerSystem,
    gfpps: &[usize],
    uc: &UcVars,
    ed: &EdVars,
    horizon: usize,
) -> Result<CouplingVars, ModelError> {
    let mut vars = CouplingVars::default();
    for &g in gfpps {
        let gen = &power.generators[g];
        for w in gen.bids.windows(2) {
            if w[1].price < w[0].price {
                return Err(ModelError::NonFinite(format!(
                    "generator `{}`: bids must be sorted by price",
                    gen.id
                )));
            }
        }
        let rho = stack.add_block(
            &format!("cpl:rho:{}", gen.id),
            horizon,
            ConeKind::Nonneg,
            VarRole::CommitmentAux,
        )?;
        vars.marginal_price.insert(g, rho);

        let nb = gen.bids.len();
        for t in 1..=horizon {
            for b in 0..nb {
                let w = uc.bid_select(g, b, t).ok_or_else(|| {
                    ModelError::NonFinite(format!(
                        "generator `{}` has no selection binaries",
                        gen.id
                    ))
                })?;
                stack.add_row(
                    &format!("bidw:{}:{b}:{t}", gen.id),
                    LinearExpr::new()
                        .term(w, gen.bids[b].quantity)
                        .term(ed.supply(g, b, t), -1.0),
                    Sense::Ge,
                    0.0,
                    RowRole::Dispatch,
                )?;
                if b + 1 < nb {
                    let w_next = uc.bid_select(g, b + 1, t).expect("next bid exists");
                    stack.add_row(
                        &format!("bidfull:{}:{b}:{t}", gen.id),
                        LinearExpr::var(ed.supply(g, b, t)).term(w_next, -gen.bids[b].quantity),
                        Sense::Ge,
                        0.0,
                        RowRole::Dispatch,
                    )?;
                }
            }

            // marginal price, telescoped over the selection ladder
            let mut expr = LinearExpr::var(VarRef {
                block: rho,
                index: t - 1,
            });
            for b in 0..nb {
                let w = uc.bid_select(g, b, t).expect("bid exists");
                expr.add_term(w, -gen.bids[b].price);
                if b + 1 < nb {
                    let w_next = uc.bid_select(g, b + 1, t).expect("next bid exists");
                    expr.add_term(w_next, gen.bids[b].price);
                }
            }
            stack.add_row(
                &format!("rho:{}:{t}", gen.id),
                expr,
                Sense::Eq,
                0.0,
                RowRole::Commitment,
            )?;
        }
    }
    Ok(vars)
}

/// Arithmetic mean of nodal prices over a zone's averaging subset.
pub fn zonal_price(
    prices: &BTreeMap<(String, usize), f64>,
    zone: &PriceZone,
    t: usize,
) -> Result<f64, ModelError> {
    let set = zone.averaging_set();
    if set.is_empty() {
        return Err(ModelError::NonFinite(format!(
            "zone `{}` has an empty averaging set",
            zone.id
        )));
    }
    let mut sum = 0.0;
    for j in set {
        sum += prices
            .get(&(j.clone(), t))
            .copied()
            .ok_or_else(|| ModelError::UnknownTag(format!("gbal:{j}:{t}")))?;
    }
    Ok(sum / set.len() as f64)
}

/// Bid-validity row for one plant and period, written over dual variables
/// of the gas balance rows:
///
/// `alpha ρ + M (1 - u) >= (2 p_max h2 + h1) ψ`
///
/// with `ψ = scale * Σ weight_j · y_j`. The output-dependent marginal fuel
/// factor is bounded at its upper envelope over the output window, which
/// can only tighten the requirement; `scale` undoes the stage weighting of
/// the gas duals. Emitted tag: `val:{gen}:{t}`.
#[allow(clippy::too_many_arguments)]
pub fn bid_validity_row(
    program: &mut ConicProgram,
    link: &GfppLink,
    p_max: f64,
    params: &BidValidityParams,
    rho: VarRef,
    on: VarRef,
    psi_terms: &[(VarRef, f64)],
    scale: f64,
    t: usize,
) -> Result<(), ModelError> {
    let coef = link.heat_rate.marginal_fuel(p_max);
    let big_m = params.big_m(p_max, &link.heat_rate);
    let mut expr = LinearExpr::new()
        .term(rho, link.alpha_markup)
        .term(on, -big_m);
    for &(y, weight) in psi_terms {
        expr.add_term(y, -coef * scale * weight);
    }
    program.add_row(
        &format!("val:{}:{t}", link.generator),
        expr,
        Sense::Ge,
        -big_m,
    )?;
    Ok(())
}

/// Slack of the validity requirement at realized values (nonnegative means
/// it holds): `alpha ρ + M (1 - u) - (2 p h2 + h1) ψ` with actual output.
pub fn validity_slack(
    link: &GfppLink,
    p_max: f64,
    params: &BidValidityParams,
    rho: f64,
    on: f64,
    p: f64,
    psi: f64,
) -> f64 {
    let big_m = params.big_m(p_max, &link.heat_rate);
    link.alpha_markup * rho + big_m * (1.0 - on) - link.heat_rate.marginal_fuel(p) * psi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gas::GfppDemand;
    use crate::model::{SolveStatus, Solution};
    use crate::power::{Bid, Bus, Generator};
    use crate::solver::{ConicSolver, InteriorPointSolver, SolveLimits};

    fn gas_gen(id: &str, bids: Vec<Bid>) -> Generator {
        Generator {
            id: id.into(),
            bus: "b1".into(),
            fuel: Fuel::Gas,
            no_load_cost: 0.0,
            startup: vec![],
            p_min: 0.0,
            p_max: bids.iter().map(|b| b.quantity).sum(),
            ramp_up: 1000.0,
            ramp_down: 1000.0,
            initial_on: false,
            initial_output: 0.0,
            min_up: 1,
            min_down: 1,
            forced_on: 0,
            forced_off: 0,
            bids,
        }
    }

    struct Built {
        stack: ModelStack,
        uc: crate::power::UcVars,
        ed: crate::power::EdVars,
        cpl: CouplingVars,
        gas_vars: GasVars,
    }

    fn build_coupled(bids: Vec<Bid>, load: f64) -> Built {
        let power = PowerSystem {
            buses: vec![Bus {
                id: "b1".into(),
                angle_min: -1.0,
                angle_max: 1.0,
                load: vec![load],
            }],
            lines: vec![],
            generators: vec![gas_gen("g1", bids)],
        };
        // widened two-junction gas system so even the largest heat-rate
        // demand in these tests is routable
        let mut gas = crate::gas::tests::two_junction_toy(0.0);
        gas.junctions[0].supply_max = 40.0;
        gas.junctions[0].supply_segments[0].capacity = 40.0;
        gas.junctions[0].pressure_sq_max = 2000.0;
        gas.junctions[1].pressure_sq_max = 2000.0;
        let links = vec![GfppLink {
            generator: "g1".into(),
            bus: "b1".into(),
            junction: "j2".into(),
            zone: "z".into(),
            heat_rate: HeatRateCurve {
                h0: 5.0,
                h1: 2.0,
                h2: 0.01,
            },
            alpha_markup: 1.0,
        }];
        let mut stack = ModelStack::new();
        let uc = crate::power::build_uc_block(&mut stack, &power, 1, &[0]).unwrap();
        let ed = crate::power::build_ed_block(&mut stack, &power, 1, &uc, &[0]).unwrap();
        let coupled = [gas.junction_index("j2").unwrap()];
        let gas_vars =
            crate::gas::build_gas_blocks(&mut stack, &gas, &GfppDemand::Variables(&coupled), 1)
                .unwrap();
        let mut cpl =
            gas_demand_rows(&mut stack, &power, &gas, &links, &uc, &ed, &gas_vars, 1).unwrap();
        cpl.merge(bid_logic_rows(&mut stack, &power, &[0], &uc, &ed, 1).unwrap());
        stack.apply_objective(0.5).unwrap();
        Built {
            stack,
            uc,
            ed,
            cpl,
            gas_vars,
        }
    }

    fn solve_with(built: &Built, fixings: &[(VarRef, f64)]) -> Solution {
        let form = built.stack.program.to_standard_form().unwrap();
        InteriorPointSolver::new().solve_fixed(&form, &SolveLimits::default(), fixings)
    }

    fn default_bids() -> Vec<Bid> {
        vec![
            Bid {
                price: 10.0,
                quantity: 4.0,
            },
            Bid {
                price: 20.0,
                quantity: 3.0,
            },
            Bid {
                price: 30.0,
                quantity: 3.0,
            },
        ]
    }

    #[test]
    fn fuel_use_floor_while_online_at_zero_output() {
        let built = build_coupled(default_bids(), 0.0);
        let fix = vec![
            (built.uc.on(0, 1), 1.0),
            (built.uc.start(0, 1), 1.0),
            (built.uc.stop(0, 1), 0.0),
            (built.ed.output(0, 1), 0.0),
        ];
        let sol = solve_with(&built, &fix);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let fuel = sol.value(built.cpl.fuel_use(0, 1).unwrap());
        assert!((fuel - 5.0).abs() < 1e-4, "fuel {fuel}");
    }

    #[test]
    fn fuel_use_tracks_the_quadratic_under_cost_pressure() {
        // at p = 10: 5 + 2*10 + 0.01*100 = 26, and the junction consumption
        // variable settles on the same number
        let built = build_coupled(default_bids(), 10.0);
        let fix = vec![
            (built.uc.on(0, 1), 1.0),
            (built.uc.start(0, 1), 1.0),
            (built.uc.stop(0, 1), 0.0),
            (built.ed.output(0, 1), 10.0),
        ];
        let sol = solve_with(&built, &fix);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let fuel = sol.value(built.cpl.fuel_use(0, 1).unwrap());
        assert!((fuel - 26.0).abs() < 1e-3, "fuel {fuel}");
        let j2 = 1;
        let gamma = sol.value(built.gas_vars.gfpp_use(j2, 1).unwrap());
        assert!((gamma - 26.0).abs() < 1e-3, "gamma {gamma}");
    }

    #[test]
    fn marginal_price_telescopes_over_prefix_ladders() {
        let prices = [10.0, 20.0, 30.0];
        let quantities = [4.0, 3.0, 3.0];
        for pattern in 0..8u8 {
            let w: Vec<f64> = (0..3).map(|b| ((pattern >> b) & 1) as f64).collect();
            let is_prefix = w.windows(2).all(|p| p[0] >= p[1]);
            // load forces the dispatch implied by the ladder: every selected
            // bid below the top one is fully used
            let load = if is_prefix {
                let top = (0..3).rev().find(|&b| w[b] > 0.5);
                match top {
                    None => 0.0,
                    Some(top) => {
                        quantities[..top].iter().sum::<f64>() + 0.5 * quantities[top]
                    }
                }
            } else {
                0.0
            };
            let built = build_coupled(default_bids(), load);
            let mut fix = vec![
                (built.uc.on(0, 1), 1.0),
                (built.uc.start(0, 1), 1.0),
                (built.uc.stop(0, 1), 0.0),
            ];
            for b in 0..3 {
                fix.push((built.uc.bid_select(0, b, 1).unwrap(), w[b]));
            }
            let sol = solve_with(&built, &fix);
            if !is_prefix {
                assert_eq!(
                    sol.status,
                    SolveStatus::Infeasible,
                    "non-prefix ladder {w:?} must be infeasible"
                );
                continue;
            }
            assert_eq!(sol.status, SolveStatus::Optimal, "ladder {w:?}");
            let rho = sol.value(built.cpl.marginal_price(0, 1).unwrap());
            let expect = (0..3)
                .filter(|&b| w[b] > 0.5)
                .map(|b| prices[b])
                .fold(0.0, f64::max);
            assert!(
                (rho - expect).abs() < 1e-5,
                "ladder {w:?}: rho {rho} expected {expect}"
            );
        }
    }

    #[test]
    fn zonal_price_is_a_plain_mean() {
        let mut prices = BTreeMap::new();
        prices.insert(("a".to_string(), 1), 3.0);
        prices.insert(("b".to_string(), 1), 5.0);
        prices.insert(("c".to_string(), 1), 130.0);
        let zone = PriceZone {
            id: "z".into(),
            junctions: vec!["a".into(), "b".into(), "c".into()],
            averaging: None,
        };
        assert!((zonal_price(&prices, &zone, 1).unwrap() - 46.0).abs() < 1e-12);

        let singleton = PriceZone {
            id: "z1".into(),
            junctions: vec!["c".into()],
            averaging: None,
        };
        assert_eq!(zonal_price(&prices, &singleton, 1).unwrap(), 130.0);

        let subset = PriceZone {
            id: "z2".into(),
            junctions: vec!["a".into(), "b".into(), "c".into()],
            averaging: Some(vec!["a".into(), "b".into()]),
        };
        assert_eq!(zonal_price(&prices, &subset, 1).unwrap(), 4.0);
    }

    #[test]
    fn validity_slack_arithmetic() {
        let link = GfppLink {
            generator: "g1".into(),
            bus: "b1".into(),
            junction: "j".into(),
            zone: "z".into(),
            heat_rate: HeatRateCurve {
                h0: 0.0,
                h1: 2.0,
                h2: 0.01,
            },
            alpha_markup: 1.1,
        };
        let params = BidValidityParams { price_cap: 200.0 };
        let m = params.big_m(10.0, &link.heat_rate);
        assert!((m - 200.0 * 2.2).abs() < 1e-12);
        // offline: the deactivation constant dominates any capped price
        assert!(validity_slack(&link, 10.0, &params, 0.0, 0.0, 0.0, 200.0) >= 0.0);
        // p=10, psi=3: 1.1*20 = 22 >= (0.2+2)*3 = 6.6
        let s = validity_slack(&link, 10.0, &params, 20.0, 1.0, 10.0, 3.0);
        assert!((s - (22.0 - 6.6)).abs() < 1e-9);
        // psi=130 breaks it: 22 < 2.2*130
        let s = validity_slack(&link, 10.0, &params, 20.0, 1.0, 10.0, 130.0);
        assert!(s < 0.0);
    }

    #[test]
    fn validity_row_shape() {
        let mut p = ConicProgram::new();
        let rho = p.add_block("rho", 1, ConeKind::Nonneg).unwrap();
        let on = p.add_block("on", 1, ConeKind::Nonneg).unwrap();
        let y = p.add_block("y", 2, ConeKind::Nonneg).unwrap();
        let link = GfppLink {
            generator: "g1".into(),
            bus: "b1".into(),
            junction: "j".into(),
            zone: "z".into(),
            heat_rate: HeatRateCurve {
                h0: 0.0,
                h1: 2.0,
                h2: 0.0,
            },
            alpha_markup: 1.0,
        };
        let params = BidValidityParams { price_cap: 200.0 };
        let (rho_v, on_v) = (p.var(rho, 0), p.var(on, 0));
        let psi = [(p.var(y, 0), 0.5), (p.var(y, 1), 0.5)];
        bid_validity_row(&mut p, &link, 10.0, &params, rho_v, on_v, &psi, 2.0, 1).unwrap();
        let row = p.row_by_tag("val:g1:1").unwrap();
        assert_eq!(row.rhs, -400.0);
        // committed, rho 20, stored duals 1.5 (true prices 3.0 at scale 2):
        // 20 - 400 - 2*(1.5 + 1.5)/... lhs must clear the rhs
        let lhs = row.expr.evaluate(&|v| {
            if v == p.var(rho, 0) {
                20.0
            } else if v == p.var(on, 0) {
                1.0
            } else {
                1.5
            }
        });
        assert!(lhs >= row.rhs, "lhs {lhs} rhs {}", row.rhs);
        // committed at a shedding-level price is cut off
        let lhs = row.expr.evaluate(&|v| {
            if v == p.var(rho, 0) {
                20.0
            } else if v == p.var(on, 0) {
                1.0
            } else {
                65.0 // stored scaled duals; true nodal price 130
            }
        });
        assert!(lhs < row.rhs, "lhs {lhs} rhs {}", row.rhs);
    }
}
