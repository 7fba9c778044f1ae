//! Stress-grid sweeps: every (eta_p, eta_g, mode) cell runs independently
//! on a bounded worker pool; reports merge in grid order regardless of
//! completion order, and the aggregate CSV is deterministic under a fixed
//! config (with timing zeroed when requested).

use crate::harness::config::RunConfig;
use crate::harness::data::{scale_loads, TestSystem};
use crate::harness::report::{Mode, RunReport};
use crate::harness::runs::{run_baseline, run_gna, with_scenario};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug, Clone)]
pub struct SweepRequest {
    pub eta_p: Vec<f64>,
    pub eta_g: Vec<f64>,
    pub modes: Vec<Mode>,
    pub jobs: usize,
}

#[derive(Debug)]
pub struct SweepOutcome {
    /// One slot per grid cell, in (eta_p, eta_g, mode) order.
    pub reports: Vec<Result<RunReport, String>>,
    pub csv: String,
}

impl SweepOutcome {
    pub fn report_for(&self, eta_p: f64, eta_g: f64, mode: Mode) -> Option<&RunReport> {
        self.reports.iter().flatten().find(|r| {
            r.scenario.mode == mode
                && (r.scenario.eta_p - eta_p).abs() < 1e-12
                && (r.scenario.eta_g - eta_g).abs() < 1e-12
        })
    }
}

fn run_cell(
    system: &TestSystem,
    cfg: &RunConfig,
    eta_p: f64,
    eta_g: f64,
    mode: Mode,
) -> Result<RunReport, String> {
    let scaled = scale_loads(system, eta_p, eta_g);
    let result = match mode {
        Mode::A => run_baseline(&scaled, cfg),
        Mode::B => run_gna(&scaled, cfg),
    };
    result
        .map(|r| with_scenario(r, eta_p, eta_g))
        .map_err(|e| format!("eta_p={eta_p} eta_g={eta_g} mode={mode}: {e}"))
}

/// Runs the whole grid and assembles the plot-ready CSV. Cell failures are
/// recorded in their slot; the sweep continues.
pub fn sweep(system: &TestSystem, cfg: &RunConfig, request: &SweepRequest) -> SweepOutcome {
    assert!(
        !request.eta_p.is_empty() && !request.eta_g.is_empty() && !request.modes.is_empty(),
        "sweep grids must be nonempty"
    );
    let mut cells = Vec::new();
    for &eta_p in &request.eta_p {
        for &eta_g in &request.eta_g {
            for &mode in &request.modes {
                cells.push((eta_p, eta_g, mode));
            }
        }
    }

    let slots: Mutex<Vec<Option<Result<RunReport, String>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = request.jobs.max(1).min(cells.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let (eta_p, eta_g, mode) = cells[i];
                let result = run_cell(system, cfg, eta_p, eta_g, mode);
                slots.lock().expect("no poisoned worker").as_mut_slice()[i] = Some(result);
            });
        }
    });

    let reports: Vec<Result<RunReport, String>> = slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|slot| slot.expect("every cell ran"))
        .collect();

    let csv = render_csv(system, cfg, &reports);
    SweepOutcome { reports, csv }
}

fn render_csv(system: &TestSystem, cfg: &RunConfig, reports: &[Result<RunReport, String>]) -> String {
    let mut zone_ids: Vec<&str> = system
        .coupling
        .zones
        .iter()
        .map(|z| z.id.as_str())
        .collect();
    zone_ids.sort_unstable();

    let mut csv = String::from("eta_p,eta_g,mode,power_cost,gas_cost,loss,total");
    for z in &zone_ids {
        csv.push_str(&format!(",psi_{z}"));
    }
    csv.push_str(",gap,wall_s\n");

    for report in reports.iter().flatten() {
        let s = &report.scenario;
        csv.push_str(&format!(
            "{:.3},{:.3},{},{:.6},{:.6},{:.6},{:.6}",
            s.eta_p,
            s.eta_g,
            s.mode,
            report.costs.power_cost,
            report.costs.gas_cost,
            report.costs.invalid_bid_loss,
            report.costs.total,
        ));
        for z in &zone_ids {
            let psi = report
                .zonal_gas_prices
                .get(*z)
                .and_then(|v| v.first())
                .copied()
                .unwrap_or(f64::NAN);
            csv.push_str(&format!(",{psi:.6}"));
        }
        let wall = if cfg.run.deterministic_timing {
            0.0
        } else {
            report.stats.wall_s
        };
        csv.push_str(&format!(",{:.6},{:.3}\n", report.stats.gap, wall));
    }
    csv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::toy2x2;

    #[test]
    fn one_by_one_grid_both_modes_yields_two_reports() {
        let system = toy2x2();
        let cfg = RunConfig::default();
        let out = sweep(
            &system,
            &cfg,
            &SweepRequest {
                eta_p: vec![1.0],
                eta_g: vec![1.0],
                modes: vec![Mode::A, Mode::B],
                jobs: 2,
            },
        );
        assert_eq!(out.reports.len(), 2);
        assert!(out.reports.iter().all(|r| r.is_ok()));
        assert!(out.report_for(1.0, 1.0, Mode::A).is_some());
        assert!(out.report_for(1.0, 1.0, Mode::B).is_some());
        assert!(out.csv.lines().count() == 3);
    }

    #[test]
    fn gas_cost_is_monotone_along_the_gas_axis() {
        let system = toy2x2();
        let cfg = RunConfig::default();
        let out = sweep(
            &system,
            &cfg,
            &SweepRequest {
                eta_p: vec![1.0],
                eta_g: vec![1.0, 2.0, 3.0, 4.0],
                modes: vec![Mode::A],
                jobs: 2,
            },
        );
        let mut last = 0.0;
        for r in out.reports.iter().flatten() {
            assert!(
                r.costs.gas_cost >= last - 1e-6,
                "gas cost fell: {} after {last}",
                r.costs.gas_cost
            );
            last = r.costs.gas_cost;
        }
    }

    #[test]
    fn reruns_are_byte_identical_with_deterministic_timing() {
        let system = toy2x2();
        let mut cfg = RunConfig::default();
        cfg.run.deterministic_timing = true;
        let request = SweepRequest {
            eta_p: vec![1.0],
            eta_g: vec![1.0, 3.0],
            modes: vec![Mode::A, Mode::B],
            jobs: 3,
        };
        let first = sweep(&system, &cfg, &request);
        let second = sweep(&system, &cfg, &request);
        assert_eq!(first.csv, second.csv);
        assert!(!first.csv.is_empty());
    }
}
