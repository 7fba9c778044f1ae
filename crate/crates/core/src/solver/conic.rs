//! Continuous LP/SOCP solving behind a narrow contract.
//!
//! The reference engine is an embedded primal-dual interior-point method
//! (the `clarabel` crate) with statically regularized KKT solves. The
//! contract is what the rest of the crate depends on: deterministic solves,
//! duals for every tagged row under the model sign convention, and Farkas
//! rays on infeasibility. An external solver can be adapted by implementing
//! [`ConicSolver`] against the canonical JSON form of [`StandardForm`].

use crate::model::{BlockId, ConeKind, Sense, Solution, SolveStatus, StandardForm, VarRef};
use crate::solver::{Fixings, SolveLimits};
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use std::collections::BTreeMap;

pub trait ConicSolver {
    /// Solves `form` to optimality (gap within tolerance) or reports why not.
    /// Numerical failure becomes a `Limit` status, never a panic.
    fn solve(&self, form: &StandardForm, limits: &SolveLimits) -> Solution {
        self.solve_fixed(form, limits, &[])
    }

    /// Same, with single-variable fixings `x = v` layered on as equality
    /// rows. Their multipliers are returned under `fix:{block}:{index}`
    /// tags, i.e. as sensitivities of the optimum to the fixed values.
    fn solve_fixed(&self, form: &StandardForm, limits: &SolveLimits, fixings: &Fixings)
        -> Solution;
}

/// The embedded interior-point engine.
#[derive(Debug, Clone, Default)]
pub struct InteriorPointSolver;

impl InteriorPointSolver {
    pub fn new() -> Self {
        InteriorPointSolver
    }
}

/// Tag for the multiplier of a solve-time fixing row.
pub fn fixing_tag(form: &StandardForm, v: VarRef) -> String {
    format!("fix:{}:{}", form.blocks[v.block.0].name, v.index)
}

// Clarabel form: min ½xᵀPx + qᵀx s.t. Ax + s = b, s ∈ K, x free. Mixed-sense
// rows and variable cones both map onto slack cones:
//   a x >= b  ->  -a x + s = -b, s in R+        (model dual y = +z)
//   a x  = b  ->   a x + s =  b, s in {0}       (model dual y = -z)
//   block in K ->  -x + s = 0,   s in K
// On infeasibility, z is a Farkas ray; the same sign map turns it into the
// model-convention certificate (see `Solution` docs).
struct ClarabelPlan {
    a: CscMatrix<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
    /// (clarabel row, tag, sign) for every dual-carrying row.
    dual_rows: Vec<(usize, String, f64)>,
}

fn build_plan(form: &StandardForm, fixings: &Fixings) -> ClarabelPlan {
    let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); form.rows.len()];
    for &(r, c, v) in &form.triplets {
        per_row[r].push((c, v));
    }

    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut b = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    let mut dual_rows = Vec::new();

    fn push_cone(cones: &mut Vec<SupportedConeT<f64>>, kind: ConeKind, n: usize) {
        match kind {
            ConeKind::Free => match cones.last_mut() {
                Some(SupportedConeT::ZeroConeT(k)) => *k += n,
                _ => cones.push(SupportedConeT::ZeroConeT(n)),
            },
            ConeKind::Nonneg => match cones.last_mut() {
                Some(SupportedConeT::NonnegativeConeT(k)) => *k += n,
                _ => cones.push(SupportedConeT::NonnegativeConeT(n)),
            },
            ConeKind::SecondOrder => cones.push(SupportedConeT::SecondOrderConeT(n)),
        }
    }

    for (i, row) in form.rows.iter().enumerate() {
        let r = b.len();
        let (flip, sign) = match row.sense {
            Sense::Ge => (-1.0, 1.0),
            Sense::Eq => (1.0, -1.0),
        };
        for &(c, v) in &per_row[i] {
            entries.push((r, c, flip * v));
        }
        b.push(flip * row.rhs);
        push_cone(
            &mut cones,
            match row.sense {
                Sense::Ge => ConeKind::Nonneg,
                Sense::Eq => ConeKind::Free,
            },
            1,
        );
        dual_rows.push((r, row.tag.clone(), sign));
    }

    for block in &form.blocks {
        if block.cone.kind == ConeKind::Free {
            continue;
        }
        let r0 = b.len();
        for i in 0..block.cone.dim {
            entries.push((r0 + i, block.start + i, -1.0));
            b.push(0.0);
        }
        push_cone(&mut cones, block.cone.kind, block.cone.dim);
    }

    for &(v, value) in fixings {
        let col = form.column_of(v).expect("fixing resolves");
        let r = b.len();
        entries.push((r, col, 1.0));
        b.push(value);
        push_cone(&mut cones, ConeKind::Free, 1);
        dual_rows.push((r, fixing_tag(form, v), -1.0));
    }

    entries.sort_by_key(|&(r, c, _)| (c, r));
    let m = b.len();
    let n = form.n_cols;
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::with_capacity(entries.len());
    let mut nzval = Vec::with_capacity(entries.len());
    let mut k = 0usize;
    for col in 0..n {
        colptr.push(rowval.len());
        while k < entries.len() && entries[k].1 == col {
            rowval.push(entries[k].0);
            nzval.push(entries[k].2);
            k += 1;
        }
    }
    colptr.push(rowval.len());

    ClarabelPlan {
        a: CscMatrix::new(m, n, colptr, rowval, nzval),
        b,
        cones,
        dual_rows,
    }
}

fn map_status(status: SolverStatus) -> SolveStatus {
    match status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::Limit,
    }
}

impl ConicSolver for InteriorPointSolver {
    fn solve_fixed(
        &self,
        form: &StandardForm,
        limits: &SolveLimits,
        fixings: &Fixings,
    ) -> Solution {
        let plan = build_plan(form, fixings);
        let p = CscMatrix::<f64>::zeros((form.n_cols, form.n_cols));

        let mut builder = DefaultSettingsBuilder::default();
        builder
            .verbose(false)
            .max_iter(limits.max_iter)
            .tol_gap_abs(1e-9)
            .tol_gap_rel(1e-9)
            .tol_feas(1e-9);
        if let Some(t) = limits.time_limit {
            builder.time_limit(t.as_secs_f64());
        }
        let settings = builder.build().expect("static settings are valid");

        let mut solver = DefaultSolver::new(
            &p,
            &form.objective,
            &plan.a,
            &plan.b,
            &plan.cones,
            settings,
        );
        solver.solve();
        let sol = &solver.solution;
        let status = map_status(sol.status);

        let mut primal = BTreeMap::new();
        for (bi, block) in form.blocks.iter().enumerate() {
            for i in 0..block.cone.dim {
                primal.insert(
                    VarRef {
                        block: BlockId(bi),
                        index: i,
                    },
                    sol.x[block.start + i],
                );
            }
        }
        let mut duals = BTreeMap::new();
        for (r, tag, sign) in &plan.dual_rows {
            duals.insert(tag.clone(), sign * sol.z[*r]);
        }

        let (objective, gap) = match status {
            SolveStatus::Optimal | SolveStatus::Limit => {
                let primal_obj: f64 = form
                    .objective
                    .iter()
                    .zip(&sol.x)
                    .map(|(c, x)| c * x)
                    .sum();
                let bz: f64 = plan.b.iter().zip(&sol.z).map(|(b, z)| b * z).sum();
                // dual objective of the clarabel system is -bᵀz
                let gap = (primal_obj + bz).abs() / (1.0 + primal_obj.abs());
                (primal_obj + form.objective_constant, gap)
            }
            SolveStatus::Infeasible => (f64::INFINITY, f64::INFINITY),
            SolveStatus::Unbounded => (f64::NEG_INFINITY, f64::INFINITY),
        };

        Solution {
            status,
            primal,
            duals,
            objective,
            gap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConicProgram, LinearExpr};

    fn solve(p: &ConicProgram) -> Solution {
        InteriorPointSolver::new().solve(&p.to_standard_form().unwrap(), &SolveLimits::default())
    }

    #[test]
    fn min_x_above_three_has_unit_dual() {
        let mut p = ConicProgram::new();
        let x = p.add_block("x", 1, ConeKind::Free).unwrap();
        p.add_row("r", LinearExpr::var(p.var(x, 0)), Sense::Ge, 3.0)
            .unwrap();
        p.add_objective(&LinearExpr::var(p.var(x, 0)), 1.0).unwrap();
        let s = solve(&p);
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.value(p.var(x, 0)) - 3.0).abs() < 1e-7);
        assert!((s.dual_of("r").unwrap() - 1.0).abs() < 1e-7);
        assert!(s.gap < 1e-6);
    }

    #[test]
    fn scaled_objective_scales_dual() {
        let mut p = ConicProgram::new();
        let x = p.add_block("x", 1, ConeKind::Free).unwrap();
        p.add_row("r", LinearExpr::var(p.var(x, 0)), Sense::Ge, 3.0)
            .unwrap();
        p.add_objective(&LinearExpr::var(p.var(x, 0)), 2.0).unwrap();
        let s = solve(&p);
        assert!((s.dual_of("r").unwrap() - 2.0).abs() < 1e-7);
    }

    #[test]
    fn soc_norm_objective() {
        // min t s.t. t >= ||(3,4)|| -> 5
        let mut p = ConicProgram::new();
        let c = p.add_block("c", 3, ConeKind::SecondOrder).unwrap();
        p.add_row("fix1", LinearExpr::var(p.var(c, 1)), Sense::Eq, 3.0)
            .unwrap();
        p.add_row("fix2", LinearExpr::var(p.var(c, 2)), Sense::Eq, 4.0)
            .unwrap();
        p.add_objective(&LinearExpr::var(p.var(c, 0)), 1.0).unwrap();
        let s = solve(&p);
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.value(p.var(c, 0)) - 5.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_pair_yields_farkas_ray() {
        let mut p = ConicProgram::new();
        let x = p.add_block("x", 1, ConeKind::Free).unwrap();
        p.add_row("ge1", LinearExpr::var(p.var(x, 0)), Sense::Ge, 1.0)
            .unwrap();
        p.add_row("ge0", LinearExpr::new().term(p.var(x, 0), -1.0), Sense::Ge, 0.0)
            .unwrap();
        let s = solve(&p);
        assert_eq!(s.status, SolveStatus::Infeasible);
        // ray y >= 0 with sum_r y_r a_r = 0 and sum_r y_r b_r > 0
        let y1 = s.duals["ge1"];
        let y0 = s.duals["ge0"];
        assert!(y1 >= 0.0 && y0 >= 0.0);
        assert!((y1 - y0).abs() <= 1e-6 * (y1 + y0));
        assert!(y1 * 1.0 + y0 * 0.0 > 1e-8);
    }

    #[test]
    fn fixings_return_sensitivities() {
        // min x + y s.t. x + y >= 4, with y fixed at 1 -> x = 3,
        // d(obj)/d(yfix) = 0 (y's cost offsets the relaxed row).
        let mut p = ConicProgram::new();
        let x = p.add_block("x", 1, ConeKind::Nonneg).unwrap();
        let y = p.add_block("y", 1, ConeKind::Nonneg).unwrap();
        p.add_row(
            "cover",
            LinearExpr::var(p.var(x, 0)).term(p.var(y, 0), 1.0),
            Sense::Ge,
            4.0,
        )
        .unwrap();
        p.add_objective(
            &LinearExpr::var(p.var(x, 0)).term(p.var(y, 0), 3.0),
            1.0,
        )
        .unwrap();
        let form = p.to_standard_form().unwrap();
        let s = InteriorPointSolver::new().solve_fixed(
            &form,
            &SolveLimits::default(),
            &vec![(p.var(y, 0), 1.0)],
        );
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.value(p.var(x, 0)) - 3.0).abs() < 1e-6);
        // objective 3 + 3*1 = 6; raising the fix by d changes obj by (3-1)d
        assert!((s.objective - 6.0).abs() < 1e-6);
        let sens = s.duals[&fixing_tag(&form, p.var(y, 0))];
        assert!((sens - 2.0).abs() < 1e-6, "sens={sens}");
    }

    #[test]
    fn unbounded_reports_ray_direction() {
        let mut p = ConicProgram::new();
        let x = p.add_block("x", 1, ConeKind::Free).unwrap();
        p.add_objective(&LinearExpr::var(p.var(x, 0)), 1.0).unwrap();
        p.add_row("lo", LinearExpr::new().term(p.var(x, 0), -1.0), Sense::Ge, -100.0)
            .unwrap();
        // x <= 100 only; min x unbounded below
        let s = solve(&p);
        assert_eq!(s.status, SolveStatus::Unbounded);
        assert!(s.value(p.var(x, 0)) < 0.0);
    }
}
