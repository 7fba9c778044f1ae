//! Branch-and-bound over a conic program with binary-marked columns: the
//! monolithic oracle used to certify the decomposition at desk scale.
//!
//! Best-bound node selection, branching on the most fractional binary,
//! deterministic tie-breaks by node id and column order. Each node is the
//! shared frozen program plus a set of solve-time fixings.

use crate::model::{Solution, SolveStatus, StandardForm, VarRef};
use crate::solver::{ConicSolver, SolveLimits};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

/// A conic program plus the columns required to be binary.
#[derive(Debug, Clone)]
pub struct MixedProgram {
    pub program: crate::model::ConicProgram,
    pub binaries: Vec<VarRef>,
}

#[derive(Debug, Clone)]
pub struct BnbConfig {
    /// Refuse instances with more binaries than this.
    pub binary_cap: usize,
    pub node_cap: usize,
    pub time_limit: Option<Duration>,
    pub rel_gap: f64,
    pub integrality: f64,
    pub relaxation_limits: SolveLimits,
}

impl Default for BnbConfig {
    fn default() -> Self {
        BnbConfig {
            binary_cap: 24,
            node_cap: 200_000,
            time_limit: None,
            rel_gap: 1e-6,
            integrality: 1e-6,
            relaxation_limits: SolveLimits::default(),
        }
    }
}

#[derive(Debug)]
pub struct BnbOutcome {
    pub solution: Solution,
    pub nodes: usize,
    pub best_bound: f64,
}

#[derive(thiserror::Error, Debug)]
pub enum BnbError {
    #[error("instance has {0} binaries, above the configured cap {1}")]
    BinaryCapExceeded(usize, usize),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

struct Node {
    bound: f64,
    id: usize,
    fixings: Vec<(VarRef, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // reversed so the heap pops the smallest bound first, oldest id on ties
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

fn most_fractional(solution: &Solution, binaries: &[VarRef], tol: f64) -> Option<(VarRef, f64)> {
    let mut best: Option<(VarRef, f64, f64)> = None;
    for &v in binaries {
        let x = solution.value(v);
        let frac = (x - x.round()).abs();
        if frac > tol {
            let score = (x - 0.5).abs();
            match best {
                Some((_, _, s)) if s <= score => {}
                _ => best = Some((v, x, score)),
            }
        }
    }
    best.map(|(v, x, _)| (v, x))
}

/// Solves the mixed program to global optimality (within the configured
/// gaps) or returns the best incumbent with its bound on hitting a limit.
pub fn branch_and_bound(
    mip: &MixedProgram,
    solver: &dyn ConicSolver,
    cfg: &BnbConfig,
) -> Result<BnbOutcome, BnbError> {
    if mip.binaries.len() > cfg.binary_cap {
        return Err(BnbError::BinaryCapExceeded(
            mip.binaries.len(),
            cfg.binary_cap,
        ));
    }
    let form: StandardForm = mip.program.to_standard_form()?;
    let started = Instant::now();

    let mut next_id = 0usize;
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        id: next_id,
        fixings: Vec::new(),
    });
    next_id += 1;

    let mut incumbent: Option<Solution> = None;
    let mut incumbent_obj = f64::INFINITY;
    let mut nodes = 0usize;
    let mut hit_limit = false;

    while let Some(node) = heap.pop() {
        let best_bound = node.bound;
        if incumbent_obj.is_finite() {
            let gap = (incumbent_obj - best_bound) / incumbent_obj.abs().max(1.0);
            if gap <= cfg.rel_gap {
                heap.push(node);
                break;
            }
        }
        if nodes >= cfg.node_cap
            || cfg
                .time_limit
                .is_some_and(|limit| started.elapsed() >= limit)
        {
            hit_limit = true;
            heap.push(node); // keep the bound for gap reporting
            break;
        }
        nodes += 1;

        let relaxed = solver.solve_fixed(&form, &cfg.relaxation_limits, &node.fixings);
        match relaxed.status {
            SolveStatus::Infeasible => continue,
            SolveStatus::Unbounded => {
                // only possible at the root of a well-posed instance
                return Ok(BnbOutcome {
                    solution: relaxed,
                    nodes,
                    best_bound: f64::NEG_INFINITY,
                });
            }
            SolveStatus::Limit => {
                hit_limit = true;
                continue;
            }
            SolveStatus::Optimal => {}
        }
        if relaxed.objective >= incumbent_obj - 1e-12 {
            continue;
        }

        match most_fractional(&relaxed, &mip.binaries, cfg.integrality) {
            None => {
                // integral: re-solve with binaries pinned to exact 0/1 so
                // reported commitments and duals come out crisp
                let mut pinned = node.fixings.clone();
                let already: std::collections::BTreeSet<VarRef> =
                    pinned.iter().map(|&(v, _)| v).collect();
                for &v in &mip.binaries {
                    if !already.contains(&v) {
                        pinned.push((v, relaxed.value(v).round()));
                    }
                }
                let exact = solver.solve_fixed(&form, &cfg.relaxation_limits, &pinned);
                let candidate = if exact.status == SolveStatus::Optimal {
                    exact
                } else {
                    relaxed
                };
                if candidate.objective < incumbent_obj {
                    incumbent_obj = candidate.objective;
                    incumbent = Some(candidate);
                }
            }
            Some((branch_var, x)) => {
                for side in [x.floor(), x.ceil()] {
                    let mut fixings = node.fixings.clone();
                    fixings.push((branch_var, side.clamp(0.0, 1.0)));
                    heap.push(Node {
                        bound: relaxed.objective,
                        id: next_id,
                        fixings,
                    });
                    next_id += 1;
                }
            }
        }
    }

    let best_bound = heap
        .peek()
        .map(|n| n.bound)
        .unwrap_or(incumbent_obj)
        .min(incumbent_obj);

    match incumbent {
        Some(mut solution) => {
            let denom = incumbent_obj.abs().max(1.0);
            solution.gap = ((incumbent_obj - best_bound) / denom).max(0.0);
            if hit_limit && solution.gap > cfg.rel_gap {
                solution.status = SolveStatus::Limit;
            }
            Ok(BnbOutcome {
                solution,
                nodes,
                best_bound,
            })
        }
        None => {
            let status = if hit_limit {
                SolveStatus::Limit
            } else {
                SolveStatus::Infeasible
            };
            Ok(BnbOutcome {
                solution: Solution {
                    status,
                    primal: Default::default(),
                    duals: Default::default(),
                    objective: f64::INFINITY,
                    gap: f64::INFINITY,
                },
                nodes,
                best_bound,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConeKind, ConicProgram, LinearExpr, Sense};
    use crate::solver::InteriorPointSolver;

    fn binary_block(p: &mut ConicProgram, name: &str, n: usize) -> Vec<VarRef> {
        let b = p.add_block(name, n, ConeKind::Nonneg).unwrap();
        for i in 0..n {
            p.add_row(
                &format!("ub:{name}:{i}"),
                LinearExpr::new().term(p.var(b, i), -1.0),
                Sense::Ge,
                -1.0,
            )
            .unwrap();
        }
        (0..n).map(|i| p.var(b, i)).collect()
    }

    #[test]
    fn integral_root_needs_one_node() {
        // min x + z with x >= 2; the relaxation already sets z = 0
        let mut p = ConicProgram::new();
        let x = p.add_block("x", 1, ConeKind::Nonneg).unwrap();
        let z = binary_block(&mut p, "z", 1);
        p.add_row("lo", LinearExpr::var(p.var(x, 0)), Sense::Ge, 2.0)
            .unwrap();
        p.add_objective(&LinearExpr::var(p.var(x, 0)).term(z[0], 1.0), 1.0)
            .unwrap();
        let mip = MixedProgram {
            program: p,
            binaries: z,
        };
        let out =
            branch_and_bound(&mip, &InteriorPointSolver::new(), &BnbConfig::default()).unwrap();
        assert_eq!(out.nodes, 1);
        assert!((out.solution.objective - 2.0).abs() < 1e-6);
    }

    #[test]
    fn two_binary_knapsack_matches_enumeration() {
        // max 5a + 4b s.t. 3a + 2b <= 4, as a minimization; enumerating the
        // four points gives -5 at (1,0)
        let mut p = ConicProgram::new();
        let z = binary_block(&mut p, "z", 2);
        p.add_row(
            "cap",
            LinearExpr::new().term(z[0], -3.0).term(z[1], -2.0),
            Sense::Ge,
            -4.0,
        )
        .unwrap();
        p.add_objective(&LinearExpr::new().term(z[0], -5.0).term(z[1], -4.0), 1.0)
            .unwrap();
        let mip = MixedProgram {
            program: p,
            binaries: z.clone(),
        };
        let out =
            branch_and_bound(&mip, &InteriorPointSolver::new(), &BnbConfig::default()).unwrap();
        assert!((out.solution.objective + 5.0).abs() < 1e-6);
        assert!((out.solution.value(z[0]) - 1.0).abs() < 1e-9);
        assert!(out.solution.value(z[1]).abs() < 1e-9);
    }

    #[test]
    fn binary_cap_is_enforced() {
        let mut p = ConicProgram::new();
        let z = binary_block(&mut p, "z", 3);
        p.add_objective(&LinearExpr::var(z[0]), 1.0).unwrap();
        let mip = MixedProgram {
            program: p,
            binaries: z,
        };
        let cfg = BnbConfig {
            binary_cap: 2,
            ..BnbConfig::default()
        };
        assert!(matches!(
            branch_and_bound(&mip, &InteriorPointSolver::new(), &cfg),
            Err(BnbError::BinaryCapExceeded(3, 2))
        ));
    }

    #[test]
    fn infeasible_integer_program_reports_infeasible() {
        let mut p = ConicProgram::new();
        let z = binary_block(&mut p, "z", 2);
        // two binaries cannot sum to three
        p.add_row(
            "need3",
            LinearExpr::var(z[0]).term(z[1], 1.0),
            Sense::Ge,
            3.0,
        )
        .unwrap();
        p.add_objective(&LinearExpr::var(z[0]), 1.0).unwrap();
        let mip = MixedProgram {
            program: p,
            binaries: z,
        };
        let out =
            branch_and_bound(&mip, &InteriorPointSolver::new(), &BnbConfig::default()).unwrap();
        assert_eq!(out.solution.status, SolveStatus::Infeasible);
    }
}
