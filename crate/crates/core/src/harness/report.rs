//! Run reports: commitments, dispatch, prices, shedding, the cost
//! breakdown, and solver statistics, serialized as one JSON document per
//! run.

use crate::power::Fuel;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    A,
    B,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::A => write!(f, "A"),
            Mode::B => write!(f, "B"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub eta_p: f64,
    pub eta_g: f64,
    pub mode: Mode,
    pub alpha: f64,
}

/// Cost accounting of one run. `total` is always the sum of the parts;
/// gas-aware runs carry zero invalid-bid loss by construction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub power_cost: f64,
    pub gas_cost: f64,
    pub invalid_bid_loss: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(power_cost: f64, gas_cost: f64, invalid_bid_loss: f64) -> Self {
        CostBreakdown {
            power_cost,
            gas_cost,
            invalid_bid_loss,
            total: power_cost + gas_cost + invalid_bid_loss,
        }
    }
}

/// Validity bookkeeping for one plant and period, with every primitive the
/// loss formula needs, so the accounting can be recomputed independently.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidityRow {
    pub generator: String,
    pub period: usize,
    pub committed: bool,
    pub output: f64,
    /// Marginal bid price realized by the selection.
    pub rho: f64,
    /// Zonal gas price seen by the plant.
    pub psi: f64,
    /// Marginal fuel use at the realized output.
    pub marginal_fuel: f64,
    pub alpha_markup: f64,
    /// `alpha rho - marginal_fuel * psi` for committed plants.
    pub profit_slack: f64,
    /// `max(0, -profit_slack) * output` for committed plants.
    pub loss: f64,
}

/// The marginal-violation times scheduled-quantity formula, recomputed
/// from the row's primitives.
pub fn recompute_loss(rows: &[ValidityRow]) -> f64 {
    rows.iter()
        .filter(|r| r.committed)
        .map(|r| (r.marginal_fuel * r.psi - r.alpha_markup * r.rho).max(0.0) * r.output)
        .sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommitmentRow {
    pub generator: String,
    pub fuel: Fuel,
    pub zone: Option<String>,
    pub on: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverStats {
    pub engine: String,
    pub objective: f64,
    pub gap: f64,
    pub iterations: usize,
    pub nodes: usize,
    pub wall_s: f64,
    pub eliminated_bids: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub system: String,
    pub scenario: Scenario,
    pub commitments: Vec<CommitmentRow>,
    /// Output per generator per period.
    pub dispatch: BTreeMap<String, Vec<f64>>,
    pub nodal_gas_prices: BTreeMap<String, Vec<f64>>,
    pub zonal_gas_prices: BTreeMap<String, Vec<f64>>,
    pub shed: BTreeMap<String, Vec<f64>>,
    /// Worst pressure-drop violation (negative residual) over pipes.
    pub weymouth_min_residual: f64,
    /// Largest residual on flow-carrying pipes (tightness measure).
    pub weymouth_max_flowing_residual: f64,
    pub validity: Vec<ValidityRow>,
    pub costs: CostBreakdown,
    pub stats: SolverStats,
}

impl RunReport {
    pub fn committed_gfpps_in_zone(&self, zone: &str) -> usize {
        self.commitments
            .iter()
            .filter(|c| c.zone.as_deref() == Some(zone) && c.on.iter().any(|&x| x > 0))
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
