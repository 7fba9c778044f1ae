//! Steady-state gas dispatch: piecewise-linear supply costs, demand
//! shedding at a penalty, compressor/valve pressure-ratio machines, and the
//! pressure-drop (Weymouth) relation relaxed to a second-order cone.
//!
//! Flow directions are predetermined by the data orientation: positive flow
//! moves from an edge's `tail` to its `head`, and on pipes the head's
//! squared pressure exceeds the tail's by at least `W·φ²`. Pressure
//! variables are squared pressures throughout; all gas quantities are
//! consistently scaled dimensionless values (the data author picks units).
//!
//! `gbal:{junction}:{t}` is the flux-conservation tag; its dual is the
//! nodal gas price.

use crate::model::{BlockId, ConeKind, LinearExpr, ModelError, Sense, Solution, VarRef};
use crate::power::{Diagnostic, Severity};
use crate::stack::{ModelStack, RowRole, VarRole};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One slope segment of a junction's supply cost curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SupplySegment {
    pub capacity: f64,
    /// $/unit, nondecreasing across segments.
    pub slope: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Junction {
    pub id: String,
    /// Squared-pressure window.
    pub pressure_sq_min: f64,
    pub pressure_sq_max: f64,
    /// Demand per period; missing trailing entries read as zero.
    #[serde(default)]
    pub demand: Vec<f64>,
    /// $/unit penalty for shedding demand at this junction.
    pub shed_cost: f64,
    #[serde(default)]
    pub supply_min: f64,
    #[serde(default)]
    pub supply_max: f64,
    #[serde(default)]
    pub supply_segments: Vec<SupplySegment>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeKind {
    Pipe { weymouth: f64 },
    Compressor { ratio_min: f64, ratio_max: f64 },
    Valve { ratio_min: f64, ratio_max: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GasEdge {
    pub id: String,
    pub head: String,
    pub tail: String,
    #[serde(flatten)]
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GasSystem {
    pub junctions: Vec<Junction>,
    pub edges: Vec<GasEdge>,
}

impl GasSystem {
    pub fn junction_index(&self, id: &str) -> Option<usize> {
        self.junctions.iter().position(|j| j.id == id)
    }

    pub fn demand_at(&self, j: usize, t: usize) -> f64 {
        self.junctions[j].demand.get(t - 1).copied().unwrap_or(0.0)
    }

    pub fn total_demand(&self, t: usize) -> f64 {
        (0..self.junctions.len())
            .map(|j| self.demand_at(j, t))
            .sum()
    }
}

/// How gas consumption of power plants enters the balance rows.
pub enum GfppDemand<'a> {
    /// Fixed per (junction index, period) injections; anything missing is 0.
    Fixed(&'a BTreeMap<(usize, usize), f64>),
    /// Junction indices that get a consumption variable, to be tied to the
    /// power side by the coupling builder.
    Variables(&'a [usize]),
}

/// Handles into the gas block.
#[derive(Debug, Clone)]
pub struct GasVars {
    pub horizon: usize,
    pub supply: BlockId,
    pub segment: BlockId,
    pub pressure_sq: BlockId,
    pub flow: BlockId,
    pub served: BlockId,
    pub shed: BlockId,
    /// Consumption variable per coupled junction (variables mode only).
    pub gfpp_use: BTreeMap<usize, BlockId>,
    seg_offsets: Vec<usize>,
}

impl GasVars {
    pub fn supply(&self, j: usize, t: usize) -> VarRef {
        VarRef {
            block: self.supply,
            index: j * self.horizon + (t - 1),
        }
    }
    pub fn segment(&self, j: usize, s: usize, t: usize) -> VarRef {
        VarRef {
            block: self.segment,
            index: (self.seg_offsets[j] + s) * self.horizon + (t - 1),
        }
    }
    pub fn pressure_sq(&self, j: usize, t: usize) -> VarRef {
        VarRef {
            block: self.pressure_sq,
            index: j * self.horizon + (t - 1),
        }
    }
    pub fn flow(&self, a: usize, t: usize) -> VarRef {
        VarRef {
            block: self.flow,
            index: a * self.horizon + (t - 1),
        }
    }
    pub fn served(&self, j: usize, t: usize) -> VarRef {
        VarRef {
            block: self.served,
            index: j * self.horizon + (t - 1),
        }
    }
    pub fn shed(&self, j: usize, t: usize) -> VarRef {
        VarRef {
            block: self.shed,
            index: j * self.horizon + (t - 1),
        }
    }
    pub fn gfpp_use(&self, j: usize, t: usize) -> Option<VarRef> {
        self.gfpp_use.get(&j).map(|&b| VarRef {
            block: b,
            index: t - 1,
        })
    }
}

/// Adds the gas dispatch blocks and rows to `stack`.
///
/// Tags: `gbal:{j}:{t}` flux conservation, `gshed:{j}:{t}` served + shed =
/// demand (the shed window follows from nonnegativity of both parts),
/// `slb:/sub:{j}:{t}` supply window, `seg:{j}:{t}` supply-segment linking,
/// `segcap:{j}:{s}:{t}` segment caps, `cmp:/vlv:lo|hi:{a}:{t}` ratio
/// machines, `wey:r1|r2|r3:{a}:{t}` cone linking rows of the relaxed
/// pressure-drop relation, `pi:lo|hi:{j}:{t}` pressure windows.
pub fn build_gas_blocks(
    stack: &mut ModelStack,
    net: &GasSystem,
    demand: &GfppDemand,
    horizon: usize,
) -> Result<GasVars, ModelError> {
    let nj = net.junctions.len();
    let na = net.edges.len();

    let mut seg_offsets = Vec::with_capacity(nj);
    let mut total_segs = 0usize;
    for j in &net.junctions {
        seg_offsets.push(total_segs);
        total_segs += j.supply_segments.len();
    }

    let supply = stack.add_block("gas:supply", nj * horizon, ConeKind::Nonneg, VarRole::Gas)?;
    let segment = stack.add_block(
        "gas:segment",
        total_segs.max(1) * horizon,
        ConeKind::Nonneg,
        VarRole::Gas,
    )?;
    let pressure_sq =
        stack.add_block("gas:pressure", nj * horizon, ConeKind::Nonneg, VarRole::Gas)?;
    let flow = stack.add_block(
        "gas:flow",
        na.max(1) * horizon,
        ConeKind::Nonneg,
        VarRole::Gas,
    )?;
    let served = stack.add_block("gas:served", nj * horizon, ConeKind::Nonneg, VarRole::Gas)?;
    let shed = stack.add_block("gas:shed", nj * horizon, ConeKind::Nonneg, VarRole::Gas)?;

    let mut gfpp_use = BTreeMap::new();
    match demand {
        GfppDemand::Variables(coupled) => {
            for &j in *coupled {
                if j >= nj {
                    return Err(ModelError::NonFinite(format!(
                        "coupled junction index {j} out of range"
                    )));
                }
                let id = &net.junctions[j].id;
                let b = stack.add_block(
                    &format!("gas:gfpp_use:{id}"),
                    horizon,
                    ConeKind::Nonneg,
                    VarRole::Gas,
                )?;
                gfpp_use.insert(j, b);
            }
        }
        GfppDemand::Fixed(map) => {
            for &(j, t) in map.keys() {
                if j >= nj || t == 0 || t > horizon {
                    return Err(ModelError::NonFinite(format!(
                        "fixed gas demand at junction {j}, period {t} is out of range"
                    )));
                }
            }
        }
    }

    let vars = GasVars {
        horizon,
        supply,
        segment,
        pressure_sq,
        flow,
        served,
        shed,
        gfpp_use,
        seg_offsets,
    };

    for t in 1..=horizon {
        for (ji, junction) in net.junctions.iter().enumerate() {
            // flux conservation: supply - served - plant use = out - in
            let mut bal = LinearExpr::var(vars.supply(ji, t)).term(vars.served(ji, t), -1.0);
            let mut bal_rhs = 0.0;
            match demand {
                GfppDemand::Fixed(map) => {
                    bal_rhs += map.get(&(ji, t)).copied().unwrap_or(0.0);
                }
                GfppDemand::Variables(_) => {
                    if let Some(g) = vars.gfpp_use(ji, t) {
                        bal.add_term(g, -1.0);
                    }
                }
            }
            for (ai, edge) in net.edges.iter().enumerate() {
                if edge.tail == junction.id {
                    bal.add_term(vars.flow(ai, t), -1.0);
                }
                if edge.head == junction.id {
                    bal.add_term(vars.flow(ai, t), 1.0);
                }
            }
            stack.add_row(
                &format!("gbal:{}:{t}", junction.id),
                bal,
                Sense::Eq,
                bal_rhs,
                RowRole::Gas,
            )?;

            // served + shed = demand; 0 <= shed <= demand follows from the
            // nonnegativity of both parts
            stack.add_row(
                &format!("gshed:{}:{t}", junction.id),
                LinearExpr::var(vars.served(ji, t)).term(vars.shed(ji, t), 1.0),
                Sense::Eq,
                net.demand_at(ji, t),
                RowRole::Gas,
            )?;

            if junction.supply_min > 0.0 {
                stack.add_row(
                    &format!("slb:{}:{t}", junction.id),
                    LinearExpr::var(vars.supply(ji, t)),
                    Sense::Ge,
                    junction.supply_min,
                    RowRole::Gas,
                )?;
            }
            stack.add_row(
                &format!("sub:{}:{t}", junction.id),
                LinearExpr::new().term(vars.supply(ji, t), -1.0),
                Sense::Ge,
                -junction.supply_max,
                RowRole::Gas,
            )?;

            if !junction.supply_segments.is_empty() {
                let mut link = LinearExpr::var(vars.supply(ji, t));
                for s in 0..junction.supply_segments.len() {
                    link.add_term(vars.segment(ji, s, t), -1.0);
                }
                stack.add_row(
                    &format!("seg:{}:{t}", junction.id),
                    link,
                    Sense::Eq,
                    0.0,
                    RowRole::Gas,
                )?;
                for (s, seg) in junction.supply_segments.iter().enumerate() {
                    stack.add_row(
                        &format!("segcap:{}:{s}:{t}", junction.id),
                        LinearExpr::new().term(vars.segment(ji, s, t), -1.0),
                        Sense::Ge,
                        -seg.capacity,
                        RowRole::Gas,
                    )?;
                    stack.obj_gas.add_term(vars.segment(ji, s, t), seg.slope);
                }
            }
            stack.obj_gas.add_term(vars.shed(ji, t), junction.shed_cost);

            stack.add_row(
                &format!("pi:lo:{}:{t}", junction.id),
                LinearExpr::var(vars.pressure_sq(ji, t)),
                Sense::Ge,
                junction.pressure_sq_min,
                RowRole::Gas,
            )?;
            stack.add_row(
                &format!("pi:hi:{}:{t}", junction.id),
                LinearExpr::new().term(vars.pressure_sq(ji, t), -1.0),
                Sense::Ge,
                -junction.pressure_sq_max,
                RowRole::Gas,
            )?;
        }

        for (ai, edge) in net.edges.iter().enumerate() {
            let h = net
                .junction_index(&edge.head)
                .ok_or_else(|| ModelError::NonFinite(format!("edge `{}` head", edge.id)))?;
            let tl = net
                .junction_index(&edge.tail)
                .ok_or_else(|| ModelError::NonFinite(format!("edge `{}` tail", edge.id)))?;
            let pi_h = vars.pressure_sq(h, t);
            let pi_t = vars.pressure_sq(tl, t);
            match edge.kind {
                EdgeKind::Pipe { weymouth } => {
                    // relaxed pressure drop pi_h - pi_t >= W φ², as the cone
                    // (d+1, d-1, 2√W φ) with d = pi_h - pi_t
                    let cone = stack.add_block(
                        &format!("wey:{}:{t}", edge.id),
                        3,
                        ConeKind::SecondOrder,
                        VarRole::Gas,
                    )?;
                    let c = |i: usize| VarRef {
                        block: cone,
                        index: i,
                    };
                    stack.add_row(
                        &format!("wey:r1:{}:{t}", edge.id),
                        LinearExpr::var(pi_h).term(pi_t, -1.0).term(c(0), -1.0),
                        Sense::Eq,
                        -1.0,
                        RowRole::Gas,
                    )?;
                    stack.add_row(
                        &format!("wey:r2:{}:{t}", edge.id),
                        LinearExpr::var(pi_h).term(pi_t, -1.0).term(c(1), -1.0),
                        Sense::Eq,
                        1.0,
                        RowRole::Gas,
                    )?;
                    stack.add_row(
                        &format!("wey:r3:{}:{t}", edge.id),
                        LinearExpr::new()
                            .term(vars.flow(ai, t), 2.0 * weymouth.sqrt())
                            .term(c(2), -1.0),
                        Sense::Eq,
                        0.0,
                        RowRole::Gas,
                    )?;
                }
                EdgeKind::Compressor {
                    ratio_min,
                    ratio_max,
                }
                | EdgeKind::Valve {
                    ratio_min,
                    ratio_max,
                } => {
                    let name = match edge.kind {
                        EdgeKind::Compressor { .. } => "cmp",
                        _ => "vlv",
                    };
                    // ratio window: lo * pi_h <= pi_t <= hi * pi_h
                    stack.add_row(
                        &format!("{name}:lo:{}:{t}", edge.id),
                        LinearExpr::var(pi_t).term(pi_h, -ratio_min),
                        Sense::Ge,
                        0.0,
                        RowRole::Gas,
                    )?;
                    stack.add_row(
                        &format!("{name}:hi:{}:{t}", edge.id),
                        LinearExpr::new().term(pi_h, ratio_max).term(pi_t, -1.0),
                        Sense::Ge,
                        0.0,
                        RowRole::Gas,
                    )?;
                }
            }
        }
    }

    Ok(vars)
}

/// Standalone gas program with fixed plant consumption: the gas objective
/// is applied at weight one, ready to solve.
pub fn build_gas_program(
    net: &GasSystem,
    gamma: &BTreeMap<(usize, usize), f64>,
    horizon: usize,
) -> Result<(ModelStack, GasVars), ModelError> {
    let mut stack = ModelStack::new();
    let vars = build_gas_blocks(&mut stack, net, &GfppDemand::Fixed(gamma), horizon)?;
    let gas_obj = stack.obj_gas.clone();
    stack.program.add_objective(&gas_obj, 1.0)?;
    Ok((stack, vars))
}

/// Nodal prices: the dual of each junction's flux-conservation row.
pub fn nodal_prices(
    solution: &Solution,
    net: &GasSystem,
    horizon: usize,
) -> Result<BTreeMap<(String, usize), f64>, ModelError> {
    let mut prices = BTreeMap::new();
    for j in &net.junctions {
        for t in 1..=horizon {
            prices.insert(
                (j.id.clone(), t),
                solution.dual_of(&format!("gbal:{}:{t}", j.id))?,
            );
        }
    }
    Ok(prices)
}

/// Per-pipe slack of the relaxed pressure-drop relation at a primal point:
/// `pi_head - pi_tail - W φ²`. Feasible points have residual >= -tol; small
/// residuals on flow-carrying pipes mean the relaxation is tight.
pub fn weymouth_residual(
    value_of: &dyn Fn(VarRef) -> f64,
    net: &GasSystem,
    vars: &GasVars,
    horizon: usize,
) -> Vec<(String, usize, f64)> {
    let mut out = Vec::new();
    for (ai, edge) in net.edges.iter().enumerate() {
        if let EdgeKind::Pipe { weymouth } = edge.kind {
            let h = net.junction_index(&edge.head).expect("validated");
            let tl = net.junction_index(&edge.tail).expect("validated");
            for t in 1..=horizon {
                let phi = value_of(vars.flow(ai, t));
                let resid = value_of(vars.pressure_sq(h, t))
                    - value_of(vars.pressure_sq(tl, t))
                    - weymouth * phi * phi;
                out.push((edge.id.clone(), t, resid));
            }
        }
    }
    out
}

/// Replaces pressures by the minimal profile consistent with the solved
/// flows, making the pressure-drop relation an equality wherever bounds
/// allow. Flows, supplies, and shedding are untouched, so the objective and
/// the duals are preserved. Falls back to the original pressures when the
/// arc digraph has a cycle or the minimal profile leaves the feasible set.
pub fn restore_pressures(
    solution: &Solution,
    net: &GasSystem,
    vars: &GasVars,
    horizon: usize,
) -> Solution {
    let nj = net.junctions.len();
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); nj];
    let mut heads = Vec::with_capacity(net.edges.len());
    let mut tails = Vec::with_capacity(net.edges.len());
    for (ai, edge) in net.edges.iter().enumerate() {
        let (h, tl) = match (
            net.junction_index(&edge.head),
            net.junction_index(&edge.tail),
        ) {
            (Some(h), Some(t)) => (h, t),
            _ => return solution.clone(),
        };
        incoming[h].push(ai);
        heads.push(h);
        tails.push(tl);
    }

    // Kahn order along arc direction (tails before heads)
    let mut remaining: Vec<usize> = incoming.iter().map(|v| v.len()).collect();
    let mut ready: Vec<usize> = (0..nj).filter(|&j| remaining[j] == 0).collect();
    let mut order = Vec::with_capacity(nj);
    while let Some(j) = ready.pop() {
        order.push(j);
        for (ai, &h) in heads.iter().enumerate() {
            if tails[ai] == j {
                remaining[h] -= 1;
                if remaining[h] == 0 {
                    ready.push(h);
                }
            }
        }
        ready.sort_unstable_by(|a, b| b.cmp(a));
    }
    if order.len() != nj {
        return solution.clone(); // directed cycle
    }

    let mut restored = solution.clone();
    for t in 1..=horizon {
        let mut pi = vec![0.0; nj];
        for &j in &order {
            let mut lo = net.junctions[j].pressure_sq_min;
            for &ai in &incoming[j] {
                let tl = tails[ai];
                match net.edges[ai].kind {
                    EdgeKind::Pipe { weymouth } => {
                        let phi = solution.value(vars.flow(ai, t));
                        lo = lo.max(pi[tl] + weymouth * phi * phi);
                    }
                    EdgeKind::Compressor { ratio_max, .. }
                    | EdgeKind::Valve { ratio_max, .. } => {
                        lo = lo.max(pi[tl] / ratio_max);
                    }
                }
            }
            pi[j] = lo;
        }
        // accept only if the minimal profile stays feasible on every edge
        let mut ok = (0..nj).all(|j| pi[j] <= net.junctions[j].pressure_sq_max + 1e-9);
        for (ai, edge) in net.edges.iter().enumerate() {
            let (h, tl) = (pi[heads[ai]], pi[tails[ai]]);
            match edge.kind {
                EdgeKind::Pipe { weymouth } => {
                    let phi = solution.value(vars.flow(ai, t));
                    if h - tl < weymouth * phi * phi - 1e-9 {
                        ok = false;
                    }
                }
                EdgeKind::Compressor {
                    ratio_min,
                    ratio_max,
                }
                | EdgeKind::Valve {
                    ratio_min,
                    ratio_max,
                } => {
                    if tl < ratio_min * h - 1e-9 || tl > ratio_max * h + 1e-9 {
                        ok = false;
                    }
                }
            }
        }
        if ok {
            for j in 0..nj {
                restored.primal.insert(vars.pressure_sq(j, t), pi[j]);
            }
        }
    }
    restored
}

/// Structural checks on the gas data; a max-flow pass warns when the fixed
/// orientations cannot route the stated demands even ignoring pressures.
pub fn validate_gas(net: &GasSystem) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut seen = BTreeMap::new();
    for j in &net.junctions {
        if seen.insert(j.id.clone(), ()).is_some() {
            diags.push(Diagnostic::error(format!(
                "duplicate junction id `{}`",
                j.id
            )));
        }
        if j.pressure_sq_min < 0.0 || j.pressure_sq_min > j.pressure_sq_max {
            diags.push(Diagnostic::error(format!(
                "junction `{}`: need 0 <= pressure_sq_min <= pressure_sq_max",
                j.id
            )));
        }
        if j.demand.iter().any(|d| !d.is_finite() || *d < 0.0) {
            diags.push(Diagnostic::error(format!(
                "junction `{}`: demands must be finite and nonnegative",
                j.id
            )));
        }
        if j.supply_min < 0.0 || j.supply_min > j.supply_max {
            diags.push(Diagnostic::error(format!(
                "junction `{}`: need 0 <= supply_min <= supply_max",
                j.id
            )));
        }
        for w in j.supply_segments.windows(2) {
            if w[1].slope < w[0].slope {
                diags.push(Diagnostic::error(format!(
                    "junction `{}`: segment slopes must be nondecreasing",
                    j.id
                )));
            }
        }
        if j
            .supply_segments
            .iter()
            .any(|s| s.capacity <= 0.0 || s.slope < 0.0)
        {
            diags.push(Diagnostic::error(format!(
                "junction `{}`: segments need positive capacity and nonnegative slope",
                j.id
            )));
        }
        let seg_total: f64 = j.supply_segments.iter().map(|s| s.capacity).sum();
        if !j.supply_segments.is_empty() && (seg_total - j.supply_max).abs() > 1e-9 {
            diags.push(Diagnostic::error(format!(
                "junction `{}`: segment capacities sum to {seg_total}, supply_max is {}",
                j.id, j.supply_max
            )));
        }
        if j.supply_max > 0.0 && j.supply_segments.is_empty() {
            diags.push(Diagnostic::error(format!(
                "junction `{}`: positive supply_max needs at least one cost segment",
                j.id
            )));
        }
        let max_slope = j
            .supply_segments
            .iter()
            .map(|s| s.slope)
            .fold(f64::NEG_INFINITY, f64::max);
        if !j.supply_segments.is_empty() && j.shed_cost <= max_slope {
            diags.push(Diagnostic::error(format!(
                "junction `{}`: shed cost {} must exceed the top supply slope {max_slope}",
                j.id, j.shed_cost
            )));
        }
    }
    for e in &net.edges {
        if net.junction_index(&e.head).is_none() || net.junction_index(&e.tail).is_none() {
            diags.push(Diagnostic::error(format!(
                "edge `{}` references an unknown junction",
                e.id
            )));
        }
        match e.kind {
            EdgeKind::Pipe { weymouth } => {
                if weymouth <= 0.0 {
                    diags.push(Diagnostic::error(format!(
                        "pipe `{}`: resistance factor must be positive",
                        e.id
                    )));
                }
            }
            EdgeKind::Compressor {
                ratio_min,
                ratio_max,
            } => {
                if !(0.0 < ratio_min && ratio_min <= ratio_max) {
                    diags.push(Diagnostic::error(format!(
                        "compressor `{}`: need 0 < ratio_min <= ratio_max",
                        e.id
                    )));
                }
                if ratio_max < 1.0 {
                    diags.push(Diagnostic::error(format!(
                        "compressor `{}`: ratio_max must be >= 1",
                        e.id
                    )));
                }
            }
            EdgeKind::Valve {
                ratio_min,
                ratio_max,
            } => {
                if !(0.0 < ratio_min && ratio_min <= ratio_max) {
                    diags.push(Diagnostic::error(format!(
                        "valve `{}`: need 0 < ratio_min <= ratio_max",
                        e.id
                    )));
                }
            }
        }
    }

    if !diags.iter().any(|d| d.severity == Severity::Error) {
        let horizon = net
            .junctions
            .iter()
            .map(|j| j.demand.len())
            .max()
            .unwrap_or(0);
        for t in 1..=horizon {
            let routable = max_routable(net, t);
            let total = net.total_demand(t);
            if routable + 1e-9 < total {
                diags.push(Diagnostic::warning(format!(
                    "period {t}: only {routable:.3} of {total:.3} demand is routable with the \
                     given flow orientations (pressure limits aside); expect shedding"
                )));
            }
        }
    }
    diags
}

/// Max demand coverable ignoring pressure physics: max-flow from supplies
/// to demands over the oriented arcs (Edmonds-Karp on a small dense graph).
fn max_routable(net: &GasSystem, t: usize) -> f64 {
    let nj = net.junctions.len();
    let source = nj;
    let sink = nj + 1;
    let n = nj + 2;
    let big = net
        .junctions
        .iter()
        .map(|j| j.supply_max)
        .sum::<f64>()
        .max(1.0)
        * 4.0;

    let mut cap = vec![vec![0.0f64; n]; n];
    for (ji, junction) in net.junctions.iter().enumerate() {
        if junction.supply_max > 0.0 {
            cap[source][ji] += junction.supply_max;
        }
        let d = net.demand_at(ji, t);
        if d > 0.0 {
            cap[ji][sink] += d;
        }
    }
    for edge in &net.edges {
        let h = net.junction_index(&edge.head).expect("validated");
        let tl = net.junction_index(&edge.tail).expect("validated");
        cap[tl][h] += big;
    }

    let mut flow = 0.0;
    loop {
        let mut prev = vec![usize::MAX; n];
        prev[source] = source;
        let mut queue = std::collections::VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if prev[v] == usize::MAX && cap[u][v] > 1e-12 {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if prev[sink] == usize::MAX {
            break;
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = sink;
        while v != source {
            let u = prev[v];
            bottleneck = bottleneck.min(cap[u][v]);
            v = u;
        }
        let mut v = sink;
        while v != source {
            let u = prev[v];
            cap[u][v] -= bottleneck;
            cap[v][u] += bottleneck;
            v = u;
        }
        flow += bottleneck;
    }
    flow
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::SolveStatus;
    use crate::solver::{ConicSolver, InteriorPointSolver, SolveLimits};

    pub(crate) fn two_junction_toy(demand: f64) -> GasSystem {
        GasSystem {
            junctions: vec![
                Junction {
                    id: "j1".into(),
                    pressure_sq_min: 1.0,
                    pressure_sq_max: 200.0,
                    demand: vec![0.0],
                    shed_cost: 130.0,
                    supply_min: 0.0,
                    supply_max: 10.0,
                    supply_segments: vec![SupplySegment {
                        capacity: 10.0,
                        slope: 1.5,
                    }],
                },
                Junction {
                    id: "j2".into(),
                    pressure_sq_min: 1.0,
                    pressure_sq_max: 200.0,
                    demand: vec![demand],
                    shed_cost: 130.0,
                    supply_min: 0.0,
                    supply_max: 0.0,
                    supply_segments: vec![],
                },
            ],
            edges: vec![GasEdge {
                id: "p1".into(),
                head: "j2".into(),
                tail: "j1".into(),
                kind: EdgeKind::Pipe { weymouth: 1.0 },
            }],
        }
    }

    fn solve_toy(net: &GasSystem) -> (Solution, GasVars) {
        let gamma = BTreeMap::new();
        let (stack, vars) = build_gas_program(net, &gamma, 1).unwrap();
        let form = stack.program.to_standard_form().unwrap();
        let sol = InteriorPointSolver::new().solve(&form, &SolveLimits::default());
        (sol, vars)
    }

    #[test]
    fn uncongested_toy_costs_and_prices() {
        let net = two_junction_toy(4.0);
        assert!(!crate::power::has_errors(&validate_gas(&net)));
        let (sol, vars) = solve_toy(&net);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 6.0).abs() < 1e-5, "obj={}", sol.objective);
        assert!((sol.value(vars.flow(0, 1)) - 4.0).abs() < 1e-5);
        assert!(sol.value(vars.shed(1, 1)).abs() < 1e-6);
        let prices = nodal_prices(&sol, &net, 1).unwrap();
        assert!((prices[&("j2".to_string(), 1)] - 1.5).abs() < 1e-5);
        assert!((prices[&("j1".to_string(), 1)] - 1.5).abs() < 1e-5);
    }

    #[test]
    fn capacity_bound_toy_sheds_at_penalty_price() {
        let net = two_junction_toy(12.0);
        let (sol, vars) = solve_toy(&net);
        assert_eq!(sol.status, SolveStatus::Optimal);
        // flow hits the supply cap, the rest is shed: 1.5*10 + 2*130
        assert!((sol.value(vars.flow(0, 1)) - 10.0).abs() < 1e-4);
        assert!((sol.value(vars.shed(1, 1)) - 2.0).abs() < 1e-4);
        assert!((sol.objective - 275.0).abs() < 1e-3);
        let prices = nodal_prices(&sol, &net, 1).unwrap();
        assert!((prices[&("j2".to_string(), 1)] - 130.0).abs() < 1e-4);
    }

    #[test]
    fn pressure_bound_congestion_is_tight_on_the_saturated_pipe() {
        let mut net = two_junction_toy(4.0);
        // pin the tail pressure and cap the head so at most 2 units flow
        net.junctions[0].pressure_sq_min = 4.0;
        net.junctions[0].pressure_sq_max = 4.0;
        net.junctions[1].pressure_sq_max = 8.0;
        let (sol, vars) = solve_toy(&net);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.value(vars.flow(0, 1)) - 2.0).abs() < 1e-4);
        assert!((sol.value(vars.shed(1, 1)) - 2.0).abs() < 1e-4);
        let resid = weymouth_residual(&|v| sol.value(v), &net, &vars, 1);
        assert_eq!(resid.len(), 1);
        assert!(resid[0].2.abs() < 1e-5, "residual {}", resid[0].2);
    }

    #[test]
    fn residual_arithmetic() {
        let net = two_junction_toy(0.0);
        let (_, vars) = solve_toy(&net);
        // phi = 0, equal pressures -> residual 0
        let zero = |v: VarRef| -> f64 {
            if v.block == vars.pressure_sq {
                5.0
            } else {
                0.0
            }
        };
        let r = weymouth_residual(&zero, &net, &vars, 1);
        assert_eq!(r[0].2, 0.0);
        // pi_h = 5, pi_t = 1, W = 1, phi = 2 -> residual 0 (tight)
        let tight = |v: VarRef| -> f64 {
            if v == vars.pressure_sq(1, 1) {
                5.0
            } else if v == vars.pressure_sq(0, 1) {
                1.0
            } else if v == vars.flow(0, 1) {
                2.0
            } else {
                0.0
            }
        };
        let r = weymouth_residual(&tight, &net, &vars, 1);
        assert!(r[0].2.abs() < 1e-12);
    }

    #[test]
    fn restored_pressures_make_flowing_pipes_tight() {
        let net = two_junction_toy(4.0);
        let (sol, vars) = solve_toy(&net);
        let restored = restore_pressures(&sol, &net, &vars, 1);
        let resid = weymouth_residual(&|v| restored.value(v), &net, &vars, 1);
        assert!(resid[0].2.abs() < 1e-8, "residual {}", resid[0].2);
        assert_eq!(restored.objective, sol.objective);
    }

    #[test]
    fn isolated_supply_junction_prices_at_its_slope() {
        // a sliver of local demand keeps the balance dual single-valued;
        // the price is then exactly the uncontested supply slope
        let net = GasSystem {
            junctions: vec![Junction {
                id: "j1".into(),
                pressure_sq_min: 1.0,
                pressure_sq_max: 10.0,
                demand: vec![1.0],
                shed_cost: 130.0,
                supply_min: 0.0,
                supply_max: 5.0,
                supply_segments: vec![SupplySegment {
                    capacity: 5.0,
                    slope: 2.0,
                }],
            }],
            edges: vec![],
        };
        let (sol, _) = solve_toy(&net);
        let prices = nodal_prices(&sol, &net, 1).unwrap();
        assert!((prices[&("j1".to_string(), 1)] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn scaling_demand_never_cheapens_the_dispatch() {
        let mut last = 0.0;
        for lambda in [1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0] {
            let net = two_junction_toy(4.0 * lambda);
            let (sol, _) = solve_toy(&net);
            assert_eq!(sol.status, SolveStatus::Optimal);
            assert!(
                sol.objective >= last - 1e-6,
                "objective fell from {last} to {} at lambda={lambda}",
                sol.objective
            );
            last = sol.objective;
        }
    }

    #[test]
    fn segments_fill_in_slope_order() {
        let mut net = two_junction_toy(7.0);
        net.junctions[0].supply_segments = vec![
            SupplySegment {
                capacity: 5.0,
                slope: 1.0,
            },
            SupplySegment {
                capacity: 5.0,
                slope: 2.0,
            },
        ];
        let (sol, vars) = solve_toy(&net);
        let s0 = sol.value(vars.segment(0, 0, 1));
        let s1 = sol.value(vars.segment(0, 1, 1));
        assert!((s0 - 5.0).abs() < 1e-5, "first segment at capacity: {s0}");
        assert!((s1 - 2.0).abs() < 1e-5);
    }

    #[test]
    fn validator_warns_on_unroutable_orientation() {
        let mut net = two_junction_toy(4.0);
        // flip the pipe so supply cannot reach the demand junction
        net.edges[0].head = "j1".into();
        net.edges[0].tail = "j2".into();
        let diags = validate_gas(&net);
        assert!(diags
            .iter()
            .any(|d| d.severity == Severity::Warning && d.message.contains("routable")));
    }
}
