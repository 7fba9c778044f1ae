//! Power-system data and constraint builders: the unit-commitment feasible
//! set (startup-cost epigraph, initial status, min-up/min-down, switching
//! logic) and the economic-dispatch block (nodal balance, bid and output
//! bounds, ramping, DC power flow, thermal and angle limits).
//!
//! Time periods are 1-indexed `t ∈ 1..=T`; `t = 0` is reserved for initial
//! conditions, which enter rows as constants. Row tags are stable and
//! documented per builder; `ebal:{bus}:{t}` is the nodal-balance tag whose
//! dual is the locational price.

use crate::model::{BlockId, ConeKind, LinearExpr, ModelError, Sense, VarRef};
use crate::stack::{ModelStack, RowRole, VarRole};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fuel {
    Gas,
    Oil,
    Coal,
    Hydro,
    Nuclear,
    Refuse,
    Other,
}

/// One step of a supply bid ladder.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Bid {
    /// $/MWh
    pub price: f64,
    /// MW
    pub quantity: f64,
}

/// Startup cost charged when the unit has been offline for at least
/// `threshold` periods. Thresholds increase, costs do not decrease.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StartupStep {
    pub threshold: u32,
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub bus: String,
    pub fuel: Fuel,
    /// $/period while committed.
    pub no_load_cost: f64,
    #[serde(default)]
    pub startup: Vec<StartupStep>,
    pub p_min: f64,
    pub p_max: f64,
    /// MW/period.
    pub ramp_up: f64,
    pub ramp_down: f64,
    pub initial_on: bool,
    #[serde(default)]
    pub initial_output: f64,
    pub min_up: u32,
    pub min_down: u32,
    /// Remaining periods the unit must stay on (resp. off) from t = 0.
    #[serde(default)]
    pub forced_on: u32,
    #[serde(default)]
    pub forced_off: u32,
    pub bids: Vec<Bid>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    #[serde(default = "default_angle_min")]
    pub angle_min: f64,
    #[serde(default = "default_angle_max")]
    pub angle_max: f64,
    /// Load per period (MW); missing trailing entries read as zero.
    #[serde(default)]
    pub load: Vec<f64>,
}

fn default_angle_min() -> f64 {
    -std::f64::consts::FRAC_PI_2
}
fn default_angle_max() -> f64 {
    std::f64::consts::FRAC_PI_2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub head: String,
    pub tail: String,
    pub susceptance: f64,
    /// Thermal limit (MW).
    pub flow_limit: f64,
    /// Max angle difference between endpoints (rad).
    pub angle_diff_limit: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerSystem {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
}

impl PowerSystem {
    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn generator_index(&self, id: &str) -> Option<usize> {
        self.generators.iter().position(|g| g.id == id)
    }

    pub fn load_at(&self, bus: usize, t: usize) -> f64 {
        self.buses[bus].load.get(t - 1).copied().unwrap_or(0.0)
    }

    pub fn total_load(&self, t: usize) -> f64 {
        (0..self.buses.len()).map(|b| self.load_at(b, t)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    pub fn error(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            message: message.into(),
        }
    }
    pub fn warning(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            message: message.into(),
        }
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// Structural checks on the network data. Errors make the system
/// unbuildable; warnings are advisory (disconnected graph, odd initials).
pub fn validate_network(net: &PowerSystem) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut seen = BTreeMap::new();
    for b in &net.buses {
        if seen.insert(b.id.clone(), ()).is_some() {
            diags.push(Diagnostic::error(format!("duplicate bus id `{}`", b.id)));
        }
        if b.angle_min > b.angle_max {
            diags.push(Diagnostic::error(format!(
                "bus `{}`: angle_min > angle_max",
                b.id
            )));
        }
        if b.load.iter().any(|d| !d.is_finite() || *d < 0.0) {
            diags.push(Diagnostic::error(format!(
                "bus `{}`: loads must be finite and nonnegative",
                b.id
            )));
        }
    }
    for l in &net.lines {
        if net.bus_index(&l.head).is_none() || net.bus_index(&l.tail).is_none() {
            diags.push(Diagnostic::error(format!(
                "line `{}` references an unknown bus",
                l.id
            )));
        }
        if l.flow_limit <= 0.0 {
            diags.push(Diagnostic::error(format!(
                "line `{}`: flow limit must be positive",
                l.id
            )));
        }
        if l.angle_diff_limit <= 0.0 {
            diags.push(Diagnostic::error(format!(
                "line `{}`: angle difference limit must be positive",
                l.id
            )));
        }
    }
    for g in &net.generators {
        if net.bus_index(&g.bus).is_none() {
            diags.push(Diagnostic::error(format!(
                "generator `{}` references unknown bus `{}`",
                g.id, g.bus
            )));
        }
        if g.p_min > g.p_max || g.p_min < 0.0 {
            diags.push(Diagnostic::error(format!(
                "generator `{}`: need 0 <= p_min <= p_max",
                g.id
            )));
        }
        if g.min_up == 0 || g.min_down == 0 {
            diags.push(Diagnostic::error(format!(
                "generator `{}`: min_up/min_down must be >= 1",
                g.id
            )));
        }
        if g.ramp_up < 0.0 || g.ramp_down < 0.0 {
            diags.push(Diagnostic::error(format!(
                "generator `{}`: ramp rates must be nonnegative",
                g.id
            )));
        }
        for w in g.startup.windows(2) {
            if w[1].threshold <= w[0].threshold {
                diags.push(Diagnostic::error(format!(
                    "generator `{}`: startup thresholds must increase",
                    g.id
                )));
            }
            if w[1].cost < w[0].cost {
                diags.push(Diagnostic::error(format!(
                    "generator `{}`: startup costs must be nondecreasing in threshold",
                    g.id
                )));
            }
        }
        if g.startup.iter().any(|s| s.threshold == 0 || s.cost < 0.0) {
            diags.push(Diagnostic::error(format!(
                "generator `{}`: startup thresholds must be >= 1 with nonnegative cost",
                g.id
            )));
        }
        if g.bids.is_empty() {
            diags.push(Diagnostic::error(format!(
                "generator `{}`: bid ladder is empty",
                g.id
            )));
        }
        for w in g.bids.windows(2) {
            if w[1].price < w[0].price {
                diags.push(Diagnostic::error(format!(
                    "generator `{}`: bids not sorted by nondecreasing price",
                    g.id
                )));
            }
        }
        if g
            .bids
            .iter()
            .any(|b| b.quantity <= 0.0 || !b.price.is_finite())
        {
            diags.push(Diagnostic::error(format!(
                "generator `{}`: bids need positive quantity and finite price",
                g.id
            )));
        }
        let cap: f64 = g.bids.iter().map(|b| b.quantity).sum();
        if cap < g.p_max - 1e-9 {
            diags.push(Diagnostic::error(format!(
                "generator `{}`: bid ladder covers {cap} MW < p_max {} MW",
                g.id, g.p_max
            )));
        }
        if g.forced_on > 0 && !g.initial_on {
            diags.push(Diagnostic::warning(format!(
                "generator `{}`: forced_on set while initially off",
                g.id
            )));
        }
        if g.forced_off > 0 && g.initial_on {
            diags.push(Diagnostic::warning(format!(
                "generator `{}`: forced_off set while initially on",
                g.id
            )));
        }
        if !g.initial_on && g.initial_output != 0.0 {
            diags.push(Diagnostic::warning(format!(
                "generator `{}`: initial output nonzero while initially off",
                g.id
            )));
        }
    }
    if !net.buses.is_empty() && !connected(net) {
        diags.push(Diagnostic::warning("power graph is not connected"));
    }
    diags
}

fn connected(net: &PowerSystem) -> bool {
    let n = net.buses.len();
    let mut adj = vec![Vec::new(); n];
    for l in &net.lines {
        if let (Some(h), Some(t)) = (net.bus_index(&l.head), net.bus_index(&l.tail)) {
            adj[h].push(t);
            adj[t].push(h);
        }
    }
    let mut seen = vec![false; n];
    let mut queue = vec![0usize];
    seen[0] = true;
    while let Some(i) = queue.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Handles into the commitment block: one column per (generator, period),
/// plus bid-selection columns for the listed generators.
#[derive(Debug, Clone)]
pub struct UcVars {
    pub horizon: usize,
    pub on: BlockId,
    pub start: BlockId,
    pub stop: BlockId,
    pub startup_cost: BlockId,
    /// Bid-selection block, present when any generator got `w` columns.
    pub bid_select: Option<BlockId>,
    /// Generator index -> offset of its first bid row in the `w` block.
    bid_select_offsets: BTreeMap<usize, usize>,
}

impl UcVars {
    pub fn on(&self, g: usize, t: usize) -> VarRef {
        VarRef {
            block: self.on,
            index: g * self.horizon + (t - 1),
        }
    }
    pub fn start(&self, g: usize, t: usize) -> VarRef {
        VarRef {
            block: self.start,
            index: g * self.horizon + (t - 1),
        }
    }
    pub fn stop(&self, g: usize, t: usize) -> VarRef {
        VarRef {
            block: self.stop,
            index: g * self.horizon + (t - 1),
        }
    }
    pub fn startup_cost(&self, g: usize, t: usize) -> VarRef {
        VarRef {
            block: self.startup_cost,
            index: g * self.horizon + (t - 1),
        }
    }
    /// `w` column of bid `b` of generator `g` at period `t`.
    pub fn bid_select(&self, g: usize, b: usize, t: usize) -> Option<VarRef> {
        let base = *self.bid_select_offsets.get(&g)?;
        Some(VarRef {
            block: self.bid_select?,
            index: (base + b) * self.horizon + (t - 1),
        })
    }
    pub fn has_bid_select(&self, g: usize) -> bool {
        self.bid_select_offsets.contains_key(&g)
    }
}

/// Builds the commitment feasible set over binaries (and the startup-cost
/// epigraph) for horizon `T`. `bid_selected` lists generator indices that
/// also get per-bid selection binaries `w` with the `w <= u` linking row.
///
/// Tags: `su:{g}:{t}:{h}` startup epigraph, `fix0:{g}:{t}` initial fixing,
/// `mup:/mdn:{g}:{t}` minimum up/down, `lnk:{g}:{t}` switch linking,
/// `bin:{u,vp,vm,w}:…` binary upper bounds, `wu:{g}:{b}:{t}` bid-commitment
/// linking.
pub fn build_uc_block(
    stack: &mut ModelStack,
    net: &PowerSystem,
    horizon: usize,
    bid_selected: &[usize],
) -> Result<UcVars, ModelError> {
    assert!(horizon >= 1, "horizon must be at least one period");
    let n = net.generators.len();

    for g in &net.generators {
        let window = (g.forced_on + g.forced_off) as usize;
        if window >= horizon && window > 0 {
            return Err(ModelError::NonFinite(format!(
                "generator `{}`: forced status window {window} must end before horizon {horizon}",
                g.id
            )));
        }
    }

    let on = stack.add_block("uc:on", n * horizon, ConeKind::Nonneg, VarRole::Commitment)?;
    let start = stack.add_block(
        "uc:start",
        n * horizon,
        ConeKind::Nonneg,
        VarRole::Commitment,
    )?;
    let stop = stack.add_block(
        "uc:stop",
        n * horizon,
        ConeKind::Nonneg,
        VarRole::Commitment,
    )?;
    let startup_cost = stack.add_block(
        "uc:startup_cost",
        n * horizon,
        ConeKind::Nonneg,
        VarRole::CommitmentAux,
    )?;

    let mut bid_select_offsets = BTreeMap::new();
    let mut w_count = 0usize;
    for &g in bid_selected {
        bid_select_offsets.insert(g, w_count);
        w_count += net.generators[g].bids.len();
    }
    let bid_select = if w_count > 0 {
        Some(stack.add_block(
            "uc:bid_select",
            w_count * horizon,
            ConeKind::Nonneg,
            VarRole::Commitment,
        )?)
    } else {
        None
    };

    let vars = UcVars {
        horizon,
        on,
        start,
        stop,
        startup_cost,
        bid_select,
        bid_select_offsets,
    };

    for (gi, gen) in net.generators.iter().enumerate() {
        let u0 = if gen.initial_on { 1.0 } else { 0.0 };
        for t in 1..=horizon {
            for (name, v) in [
                ("u", vars.on(gi, t)),
                ("vp", vars.start(gi, t)),
                ("vm", vars.stop(gi, t)),
            ] {
                stack.add_row(
                    &format!("bin:{name}:{}:{t}", gen.id),
                    LinearExpr::new().term(v, -1.0),
                    Sense::Ge,
                    -1.0,
                    RowRole::Commitment,
                )?;
            }

            // startup-cost epigraph: r >= C_h (u_t - sum_{n=1..h} u_{t-n});
            // lookback before t = 0 drops, the t-n = 0 term is a constant
            for (hi, step) in gen.startup.iter().enumerate() {
                let h = step.threshold as usize;
                let mut expr =
                    LinearExpr::var(vars.startup_cost(gi, t)).term(vars.on(gi, t), -step.cost);
                let mut rhs = 0.0;
                for nn in 1..=h {
                    let tp = t as isize - nn as isize;
                    if tp >= 1 {
                        expr.add_term(vars.on(gi, tp as usize), step.cost);
                    } else if tp == 0 {
                        rhs -= step.cost * u0;
                    }
                }
                stack.add_row(
                    &format!("su:{}:{t}:{hi}", gen.id),
                    expr,
                    Sense::Ge,
                    rhs,
                    RowRole::Commitment,
                )?;
            }

            // switching logic: v+ - v- = u_t - u_{t-1}
            let mut link = LinearExpr::var(vars.start(gi, t))
                .term(vars.stop(gi, t), -1.0)
                .term(vars.on(gi, t), -1.0);
            let link_rhs = if t >= 2 {
                link.add_term(vars.on(gi, t - 1), 1.0);
                0.0
            } else {
                -u0
            };
            stack.add_row(
                &format!("lnk:{}:{t}", gen.id),
                link,
                Sense::Eq,
                link_rhs,
                RowRole::Commitment,
            )?;
        }

        // initial status fixing over the forced window
        let window = (gen.forced_on + gen.forced_off) as usize;
        for t in 1..=window.min(horizon) {
            stack.add_row(
                &format!("fix0:{}:{t}", gen.id),
                LinearExpr::var(vars.on(gi, t)),
                Sense::Eq,
                u0,
                RowRole::Commitment,
            )?;
        }

        // minimum up: starts within the last min_up periods keep the unit on
        let tau_up = gen.min_up as usize;
        for t in tau_up.max(gen.forced_on as usize + 1)..=horizon {
            let mut expr = LinearExpr::var(vars.on(gi, t));
            for tp in (t + 1).saturating_sub(tau_up).max(1)..=t {
                expr.add_term(vars.start(gi, tp), -1.0);
            }
            stack.add_row(
                &format!("mup:{}:{t}", gen.id),
                expr,
                Sense::Ge,
                0.0,
                RowRole::Commitment,
            )?;
        }

        // minimum down: no start within min_down periods of having been on
        let tau_dn = gen.min_down as usize;
        for t in tau_dn.max(gen.forced_off as usize + 1)..=horizon {
            let mut expr = LinearExpr::new();
            for tp in (t + 1).saturating_sub(tau_dn).max(1)..=t {
                expr.add_term(vars.start(gi, tp), -1.0);
            }
            let mut rhs = -1.0;
            let tp = t as isize - tau_dn as isize;
            if tp >= 1 {
                expr.add_term(vars.on(gi, tp as usize), -1.0);
            } else {
                rhs += u0;
            }
            stack.add_row(
                &format!("mdn:{}:{t}", gen.id),
                expr,
                Sense::Ge,
                rhs,
                RowRole::Commitment,
            )?;
        }

        // bid selection: binary box for w plus w <= u
        if vars.has_bid_select(gi) {
            for t in 1..=horizon {
                for b in 0..gen.bids.len() {
                    let w = vars.bid_select(gi, b, t).expect("w exists");
                    stack.add_row(
                        &format!("bin:w:{}:{b}:{t}", gen.id),
                        LinearExpr::new().term(w, -1.0),
                        Sense::Ge,
                        -1.0,
                        RowRole::Commitment,
                    )?;
                    stack.add_row(
                        &format!("wu:{}:{b}:{t}", gen.id),
                        LinearExpr::var(vars.on(gi, t)).term(w, -1.0),
                        Sense::Ge,
                        0.0,
                        RowRole::Commitment,
                    )?;
                }
            }
        }

        for t in 1..=horizon {
            stack.obj_commit.add_term(vars.on(gi, t), gen.no_load_cost);
            stack.obj_commit.add_term(vars.startup_cost(gi, t), 1.0);
        }
    }

    Ok(vars)
}

/// Handles into the dispatch block.
#[derive(Debug, Clone)]
pub struct EdVars {
    pub horizon: usize,
    pub output: BlockId,
    pub flow: BlockId,
    pub angle: BlockId,
    pub supply: BlockId,
    bid_offsets: Vec<usize>,
}

impl EdVars {
    pub fn output(&self, g: usize, t: usize) -> VarRef {
        VarRef {
            block: self.output,
            index: g * self.horizon + (t - 1),
        }
    }
    pub fn flow(&self, e: usize, t: usize) -> VarRef {
        VarRef {
            block: self.flow,
            index: e * self.horizon + (t - 1),
        }
    }
    pub fn angle(&self, i: usize, t: usize) -> VarRef {
        VarRef {
            block: self.angle,
            index: i * self.horizon + (t - 1),
        }
    }
    /// Supply from bid `b` of generator `g` at `t`.
    pub fn supply(&self, g: usize, b: usize, t: usize) -> VarRef {
        VarRef {
            block: self.supply,
            index: (self.bid_offsets[g] + b) * self.horizon + (t - 1),
        }
    }
}

/// Builds the dispatch rows given an existing commitment block. Bid caps of
/// generators in `bid_selected` are left to the coupling builder, whose
/// selection logic replaces the plain bounds.
///
/// Tags: `ebal:{bus}:{t}` nodal balance (dual = locational price),
/// `pbid:{g}:{t}` output-bid aggregation, `bidcap:{g}:{b}:{t}` plain bid
/// caps, `plo:/pup:{g}:{t}` output bounds, `rup:/rdn:{g}:{t}` ramping,
/// `dcflow:{e}:{t}` flow-angle coupling, `thermal+:/thermal-:{e}:{t}`,
/// `ang:lo:/ang:hi:{i}:{t}`, `adiff+/-:{e}:{t}`, `refbus:{t}`.
pub fn build_ed_block(
    stack: &mut ModelStack,
    net: &PowerSystem,
    horizon: usize,
    uc: &UcVars,
    bid_selected: &[usize],
) -> Result<EdVars, ModelError> {
    let n = net.generators.len();
    let mut bid_offsets = Vec::with_capacity(n);
    let mut total_bids = 0usize;
    for g in &net.generators {
        bid_offsets.push(total_bids);
        total_bids += g.bids.len();
    }

    let output = stack.add_block("ed:output", n * horizon, ConeKind::Nonneg, VarRole::Power)?;
    let flow = stack.add_block(
        "ed:flow",
        net.lines.len().max(1) * horizon,
        ConeKind::Free,
        VarRole::Power,
    )?;
    let angle = stack.add_block(
        "ed:angle",
        net.buses.len() * horizon,
        ConeKind::Free,
        VarRole::Power,
    )?;
    let supply = stack.add_block(
        "ed:supply",
        total_bids * horizon,
        ConeKind::Nonneg,
        VarRole::Power,
    )?;

    let vars = EdVars {
        horizon,
        output,
        flow,
        angle,
        supply,
        bid_offsets,
    };

    for (gi, gen) in net.generators.iter().enumerate() {
        let u0 = if gen.initial_on { 1.0 } else { 0.0 };
        let selected = bid_selected.contains(&gi);
        for t in 1..=horizon {
            // output equals total bid supply
            let mut agg = LinearExpr::var(vars.output(gi, t));
            for b in 0..gen.bids.len() {
                agg.add_term(vars.supply(gi, b, t), -1.0);
            }
            stack.add_row(
                &format!("pbid:{}:{t}", gen.id),
                agg,
                Sense::Eq,
                0.0,
                RowRole::Dispatch,
            )?;

            if !selected {
                for (b, bid) in gen.bids.iter().enumerate() {
                    stack.add_row(
                        &format!("bidcap:{}:{b}:{t}", gen.id),
                        LinearExpr::new().term(vars.supply(gi, b, t), -1.0),
                        Sense::Ge,
                        -bid.quantity,
                        RowRole::Dispatch,
                    )?;
                }
            }

            // output window scaled by the commitment
            stack.add_row(
                &format!("plo:{}:{t}", gen.id),
                LinearExpr::var(vars.output(gi, t)).term(uc.on(gi, t), -gen.p_min),
                Sense::Ge,
                0.0,
                RowRole::Dispatch,
            )?;
            stack.add_row(
                &format!("pup:{}:{t}", gen.id),
                LinearExpr::new()
                    .term(vars.output(gi, t), -1.0)
                    .term(uc.on(gi, t), gen.p_max),
                Sense::Ge,
                0.0,
                RowRole::Dispatch,
            )?;

            // ramping against the previous period (constants at t = 1)
            let mut rup = LinearExpr::new()
                .term(vars.output(gi, t), -1.0)
                .term(uc.start(gi, t), gen.p_max);
            let mut rup_rhs = 0.0;
            if t >= 2 {
                rup.add_term(vars.output(gi, t - 1), 1.0);
                rup.add_term(uc.on(gi, t - 1), gen.ramp_up);
            } else {
                rup_rhs = -(gen.initial_output + gen.ramp_up * u0);
            }
            stack.add_row(
                &format!("rup:{}:{t}", gen.id),
                rup,
                Sense::Ge,
                rup_rhs,
                RowRole::Dispatch,
            )?;

            let mut rdn = LinearExpr::var(vars.output(gi, t)).term(uc.stop(gi, t), gen.p_min);
            let mut rdn_rhs = 0.0;
            if t >= 2 {
                rdn.add_term(vars.output(gi, t - 1), -1.0);
                rdn.add_term(uc.on(gi, t - 1), gen.ramp_down);
            } else {
                rdn_rhs = gen.initial_output - gen.ramp_down * u0;
            }
            stack.add_row(
                &format!("rdn:{}:{t}", gen.id),
                rdn,
                Sense::Ge,
                rdn_rhs,
                RowRole::Dispatch,
            )?;
        }
    }

    for t in 1..=horizon {
        for (bi, bus) in net.buses.iter().enumerate() {
            // nodal balance: generation - load = outflow at tail - inflow at head
            let mut expr = LinearExpr::new();
            for (gi, gen) in net.generators.iter().enumerate() {
                if gen.bus == bus.id {
                    expr.add_term(vars.output(gi, t), 1.0);
                }
            }
            for (ei, line) in net.lines.iter().enumerate() {
                if line.tail == bus.id {
                    expr.add_term(vars.flow(ei, t), -1.0);
                }
                if line.head == bus.id {
                    expr.add_term(vars.flow(ei, t), 1.0);
                }
            }
            stack.add_row(
                &format!("ebal:{}:{t}", bus.id),
                expr,
                Sense::Eq,
                net.load_at(bi, t),
                RowRole::Dispatch,
            )?;

            if bus.angle_min.is_finite() {
                stack.add_row(
                    &format!("ang:lo:{}:{t}", bus.id),
                    LinearExpr::var(vars.angle(bi, t)),
                    Sense::Ge,
                    bus.angle_min,
                    RowRole::Dispatch,
                )?;
            }
            if bus.angle_max.is_finite() {
                stack.add_row(
                    &format!("ang:hi:{}:{t}", bus.id),
                    LinearExpr::new().term(vars.angle(bi, t), -1.0),
                    Sense::Ge,
                    -bus.angle_max,
                    RowRole::Dispatch,
                )?;
            }
        }

        // the first bus pins the angle null space
        stack.add_row(
            &format!("refbus:{t}"),
            LinearExpr::var(vars.angle(0, t)),
            Sense::Eq,
            0.0,
            RowRole::Dispatch,
        )?;

        for (ei, line) in net.lines.iter().enumerate() {
            let h = net.bus_index(&line.head).expect("validated head");
            let tl = net.bus_index(&line.tail).expect("validated tail");
            // f = -b (theta_head - theta_tail)
            stack.add_row(
                &format!("dcflow:{}:{t}", line.id),
                LinearExpr::var(vars.flow(ei, t))
                    .term(vars.angle(h, t), line.susceptance)
                    .term(vars.angle(tl, t), -line.susceptance),
                Sense::Eq,
                0.0,
                RowRole::Dispatch,
            )?;
            stack.add_row(
                &format!("thermal+:{}:{t}", line.id),
                LinearExpr::new().term(vars.flow(ei, t), -1.0),
                Sense::Ge,
                -line.flow_limit,
                RowRole::Dispatch,
            )?;
            stack.add_row(
                &format!("thermal-:{}:{t}", line.id),
                LinearExpr::var(vars.flow(ei, t)),
                Sense::Ge,
                -line.flow_limit,
                RowRole::Dispatch,
            )?;
            stack.add_row(
                &format!("adiff+:{}:{t}", line.id),
                LinearExpr::new()
                    .term(vars.angle(h, t), -1.0)
                    .term(vars.angle(tl, t), 1.0),
                Sense::Ge,
                -line.angle_diff_limit,
                RowRole::Dispatch,
            )?;
            stack.add_row(
                &format!("adiff-:{}:{t}", line.id),
                LinearExpr::var(vars.angle(h, t)).term(vars.angle(tl, t), -1.0),
                Sense::Ge,
                -line.angle_diff_limit,
                RowRole::Dispatch,
            )?;
        }
    }

    for (gi, gen) in net.generators.iter().enumerate() {
        for t in 1..=horizon {
            for (b, bid) in gen.bids.iter().enumerate() {
                stack.obj_power.add_term(vars.supply(gi, b, t), bid.price);
            }
        }
    }

    Ok(vars)
}

/// Minimal startup cost of a fixed trajectory, evaluated directly from the
/// epigraph definition (largest applicable step, zero without a start).
pub fn startup_cost_of(gen: &Generator, on: &[f64], t: usize) -> f64 {
    let u = |tt: isize| -> f64 {
        if tt >= 1 {
            on[(tt - 1) as usize]
        } else if tt == 0 && gen.initial_on {
            1.0
        } else {
            0.0
        }
    };
    let mut best: f64 = 0.0;
    for step in &gen.startup {
        let mut v = u(t as isize);
        for nn in 1..=step.threshold as isize {
            v -= u(t as isize - nn);
        }
        best = best.max(step.cost * v);
    }
    best
}

/// Independent trajectory checker: forced initial window, switch-linking
/// identity, and run-length semantics (every switch-on run lasts at least
/// `min_up` periods unless cut by the horizon; off-runs likewise).
pub fn check_commitment_trajectory(
    gen: &Generator,
    horizon: usize,
    on: &[f64],
    start: &[f64],
    stop: &[f64],
) -> Vec<String> {
    let mut violations = Vec::new();
    let u0 = if gen.initial_on { 1.0 } else { 0.0 };
    let u = |t: usize| -> f64 {
        if t == 0 {
            u0
        } else {
            on[t - 1]
        }
    };

    for t in 1..=horizon {
        let delta = u(t) - u(t - 1);
        if (start[t - 1] - stop[t - 1] - delta).abs() > 1e-9 {
            violations.push(format!("{}: switch linking broken at t={t}", gen.id));
        }
    }

    let window = (gen.forced_on + gen.forced_off) as usize;
    for t in 1..=window.min(horizon) {
        if (u(t) - u0).abs() > 1e-9 {
            violations.push(format!("{}: forced initial status broken at t={t}", gen.id));
        }
    }

    let mut t = 1;
    while t <= horizon {
        if (u(t) - u(t - 1)).abs() > 0.5 {
            let level = u(t) > 0.5;
            let mut len = 0;
            while t + len <= horizon && (u(t + len) > 0.5) == level {
                len += 1;
            }
            let truncated = t + len > horizon;
            let min_len = if level { gen.min_up } else { gen.min_down } as usize;
            if !truncated && len < min_len {
                violations.push(format!(
                    "{}: {} run of {len} < {min_len} starting at t={t}",
                    gen.id,
                    if level { "on" } else { "off" }
                ));
            }
            t += len;
        } else {
            t += 1;
        }
    }

    violations
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::{SolveStatus, VarRef};
    use crate::solver::{ConicSolver, InteriorPointSolver, SolveLimits};

    pub(crate) fn test_gen(id: &str) -> Generator {
        Generator {
            id: id.to_string(),
            bus: "b1".to_string(),
            fuel: Fuel::Coal,
            no_load_cost: 1.0,
            startup: vec![],
            p_min: 1.0,
            p_max: 5.0,
            ramp_up: 100.0,
            ramp_down: 100.0,
            initial_on: false,
            initial_output: 0.0,
            min_up: 1,
            min_down: 1,
            forced_on: 0,
            forced_off: 0,
            bids: vec![Bid {
                price: 10.0,
                quantity: 5.0,
            }],
        }
    }

    fn one_bus_net(gens: Vec<Generator>, load: f64) -> PowerSystem {
        PowerSystem {
            buses: vec![Bus {
                id: "b1".to_string(),
                angle_min: -1.0,
                angle_max: 1.0,
                load: vec![load],
            }],
            lines: vec![],
            generators: gens,
        }
    }

    fn fix_binaries(
        uc: &UcVars,
        n_gens: usize,
        horizon: usize,
        on: &dyn Fn(usize, usize) -> f64,
    ) -> Vec<(VarRef, f64)> {
        let mut fixings = Vec::new();
        for g in 0..n_gens {
            let mut prev = None;
            for t in 1..=horizon {
                let v = on(g, t);
                fixings.push((uc.on(g, t), v));
                if let Some(p) = prev {
                    fixings.push((uc.start(g, t), (v - p as f64).max(0.0)));
                    fixings.push((uc.stop(g, t), (p as f64 - v).max(0.0)));
                }
                prev = Some(v);
            }
        }
        fixings
    }

    #[test]
    fn startup_cost_charges_the_deepest_applicable_step() {
        // two-step schedule, unit off two periods then started: epigraph
        // minimum must be the deeper cost
        let mut gen = test_gen("g1");
        gen.startup = vec![
            StartupStep {
                threshold: 1,
                cost: 100.0,
            },
            StartupStep {
                threshold: 2,
                cost: 200.0,
            },
        ];
        let net = one_bus_net(vec![gen.clone()], 0.0);
        let mut stack = ModelStack::new();
        let uc = build_uc_block(&mut stack, &net, 3, &[]).unwrap();
        stack.apply_objective(1.0).unwrap();

        let mut fixings = vec![
            (uc.on(0, 1), 0.0),
            (uc.on(0, 2), 0.0),
            (uc.on(0, 3), 1.0),
            (uc.start(0, 1), 0.0),
            (uc.start(0, 2), 0.0),
            (uc.start(0, 3), 1.0),
            (uc.stop(0, 1), 0.0),
            (uc.stop(0, 2), 0.0),
            (uc.stop(0, 3), 0.0),
        ];
        let form = stack.program.to_standard_form().unwrap();
        let sol =
            InteriorPointSolver::new().solve_fixed(&form, &SolveLimits::default(), &fixings);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.value(uc.startup_cost(0, 3)) - 200.0).abs() < 1e-6);
        assert_eq!(
            startup_cost_of(&gen, &[0.0, 0.0, 1.0], 3),
            200.0,
            "direct evaluation agrees"
        );

        // a unit that stays off accrues no startup cost
        fixings = vec![
            (uc.on(0, 1), 0.0),
            (uc.on(0, 2), 0.0),
            (uc.on(0, 3), 0.0),
            (uc.start(0, 1), 0.0),
            (uc.start(0, 2), 0.0),
            (uc.start(0, 3), 0.0),
            (uc.stop(0, 1), 0.0),
            (uc.stop(0, 2), 0.0),
            (uc.stop(0, 3), 0.0),
        ];
        let sol =
            InteriorPointSolver::new().solve_fixed(&form, &SolveLimits::default(), &fixings);
        for t in 1..=3 {
            assert!(sol.value(uc.startup_cost(0, t)).abs() < 1e-6);
        }
    }

    #[test]
    fn forced_on_window_fixes_commitment() {
        let mut gen = test_gen("g1");
        gen.initial_on = true;
        gen.initial_output = 1.0;
        gen.forced_on = 2;
        let net = one_bus_net(vec![gen], 0.0);
        let mut stack = ModelStack::new();
        let uc = build_uc_block(&mut stack, &net, 4, &[]).unwrap();
        for t in [1, 2] {
            let row = stack
                .program
                .row_by_tag(&format!("fix0:g1:{t}"))
                .expect("fixing row");
            assert_eq!(row.rhs, 1.0);
            assert_eq!(row.expr.terms, vec![(uc.on(0, t), 1.0)]);
        }
        assert!(stack.program.row_by_tag("fix0:g1:3").is_none());
    }

    #[test]
    fn forced_window_reaching_horizon_is_rejected() {
        let mut gen = test_gen("g1");
        gen.initial_on = true;
        gen.forced_on = 3;
        let net = one_bus_net(vec![gen], 0.0);
        let mut stack = ModelStack::new();
        assert!(build_uc_block(&mut stack, &net, 3, &[]).is_err());
    }

    #[test]
    fn single_bus_dispatch_meets_load() {
        let net = one_bus_net(vec![test_gen("g1")], 3.0);
        let mut stack = ModelStack::new();
        let uc = build_uc_block(&mut stack, &net, 1, &[]).unwrap();
        let ed = build_ed_block(&mut stack, &net, 1, &uc, &[]).unwrap();
        stack.apply_objective(1.0).unwrap();
        let form = stack.program.to_standard_form().unwrap();
        let fixings = fix_binaries(&uc, 1, 1, &|_, _| 1.0);
        let sol =
            InteriorPointSolver::new().solve_fixed(&form, &SolveLimits::default(), &fixings);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.value(ed.output(0, 1)) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn dc_flow_follows_angle_difference() {
        // two buses, one line with b = 10; load at the head bus only
        let net = PowerSystem {
            buses: vec![
                Bus {
                    id: "b1".into(),
                    angle_min: -1.0,
                    angle_max: 1.0,
                    load: vec![0.0],
                },
                Bus {
                    id: "b2".into(),
                    angle_min: -1.0,
                    angle_max: 1.0,
                    load: vec![2.0],
                },
            ],
            lines: vec![Line {
                id: "l1".into(),
                head: "b2".into(),
                tail: "b1".into(),
                susceptance: 10.0,
                flow_limit: 100.0,
                angle_diff_limit: 1.0,
            }],
            generators: vec![test_gen("g1")],
        };
        let mut stack = ModelStack::new();
        let uc = build_uc_block(&mut stack, &net, 1, &[]).unwrap();
        let ed = build_ed_block(&mut stack, &net, 1, &uc, &[]).unwrap();
        stack.apply_objective(1.0).unwrap();
        let form = stack.program.to_standard_form().unwrap();
        let fixings = fix_binaries(&uc, 1, 1, &|_, _| 1.0);
        let sol =
            InteriorPointSolver::new().solve_fixed(&form, &SolveLimits::default(), &fixings);
        assert_eq!(sol.status, SolveStatus::Optimal);
        // flow tail -> head serves the b2 load
        let f = sol.value(ed.flow(0, 1));
        assert!((f - 2.0).abs() < 1e-6, "flow {f}");
        let th_h = sol.value(ed.angle(1, 1));
        let th_t = sol.value(ed.angle(0, 1));
        assert!((f + 10.0 * (th_h - th_t)).abs() < 1e-8);
        // equal angles would mean zero flow
        assert!(th_h < th_t);
    }

    #[test]
    fn validator_flags_unsorted_bids_and_inverted_bounds() {
        let mut g = test_gen("g1");
        g.bids = vec![
            Bid {
                price: 20.0,
                quantity: 3.0,
            },
            Bid {
                price: 10.0,
                quantity: 3.0,
            },
        ];
        let mut g2 = test_gen("g2");
        g2.p_min = 6.0; // > p_max
        let net = one_bus_net(vec![g, g2], 0.0);
        let diags = validate_network(&net);
        assert!(diags
            .iter()
            .any(|d| d.message.contains("not sorted") && d.severity == Severity::Error));
        assert!(diags.iter().any(|d| d.message.contains("p_min")));

        let clean = one_bus_net(vec![test_gen("g1")], 1.0);
        assert!(!has_errors(&validate_network(&clean)));
    }

    #[test]
    fn random_trajectories_agree_with_row_feasibility() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let horizon = 6;

        for case in 0..1000 {
            let mut gen = test_gen("g1");
            gen.min_up = rng.gen_range(1..=3);
            gen.min_down = rng.gen_range(1..=3);
            gen.initial_on = rng.gen_bool(0.5);
            if gen.initial_on {
                gen.forced_on = rng.gen_range(0..=2);
                gen.initial_output = 1.0;
            } else {
                gen.forced_off = rng.gen_range(0..=2);
            }
            let net = one_bus_net(vec![gen.clone()], 0.0);
            let mut stack = ModelStack::new();
            let uc = build_uc_block(&mut stack, &net, horizon, &[]).unwrap();

            // random on/off path with minimal switch indicators
            let on: Vec<f64> = (0..horizon)
                .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                .collect();
            let u0 = if gen.initial_on { 1.0 } else { 0.0 };
            let mut start = vec![0.0; horizon];
            let mut stop = vec![0.0; horizon];
            for t in 1..=horizon {
                let prev = if t == 1 { u0 } else { on[t - 2] };
                start[t - 1] = (on[t - 1] - prev).max(0.0);
                stop[t - 1] = (prev - on[t - 1]).max(0.0);
            }

            let value_of = |v: VarRef| -> f64 {
                let idx = v.index % horizon;
                if v.block == uc.on {
                    on[idx]
                } else if v.block == uc.start {
                    start[idx]
                } else if v.block == uc.stop {
                    stop[idx]
                } else if v.block == uc.startup_cost {
                    startup_cost_of(&gen, &on, idx + 1)
                } else {
                    0.0
                }
            };
            let row_feasible = stack
                .program
                .row_residuals(&value_of)
                .iter()
                .all(|(_, sense, resid)| match sense {
                    crate::model::Sense::Ge => *resid >= -1e-9,
                    crate::model::Sense::Eq => resid.abs() <= 1e-9,
                });
            let checker_ok =
                check_commitment_trajectory(&gen, horizon, &on, &start, &stop).is_empty();
            assert_eq!(
                row_feasible, checker_ok,
                "disagreement in case {case}: gen={gen:?} on={on:?}"
            );
        }
    }
}
