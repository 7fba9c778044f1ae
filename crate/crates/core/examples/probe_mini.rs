use gasuc_core::harness::{mini_ne, scale_loads, run_baseline, run_gna, RunConfig};
use gasuc_core::harness::report::Mode;

fn main() {
    let system = mini_ne();
    let cfg = RunConfig::default();
    eprintln!("etap etag mode | power gas loss total | psi_t psi_l | gfT shedT | gap it wall");
    for eta_p in [1.0, 1.3, 1.6] {
        for eta_g in [1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.2, 2.4] {
            let scaled = scale_loads(&system, eta_p, eta_g);
            for mode in [Mode::A, Mode::B] {
                let t0 = std::time::Instant::now();
                let res = match mode {
                    Mode::A => run_baseline(&scaled, &cfg),
                    Mode::B => run_gna(&scaled, &cfg),
                };
                match res {
                    Ok(r) => {
                        let shed_t: f64 = ["T1","T2","T3","T4"].iter()
                            .map(|j| r.shed[*j][0]).sum();
                        eprintln!(
                            "{eta_p} {eta_g} {mode} | {:.0} {:.0} {:.0} {:.0} | {:.1} {:.2} | {} {:.2} | {:.3} {} {:.1}s",
                            r.costs.power_cost, r.costs.gas_cost, r.costs.invalid_bid_loss, r.costs.total,
                            r.zonal_gas_prices["zone-t"][0], r.zonal_gas_prices["zone-l"][0],
                            r.committed_gfpps_in_zone("zone-t"), shed_t,
                            r.stats.gap, r.stats.iterations.max(r.stats.nodes),
                            t0.elapsed().as_secs_f64(),
                        );
                    }
                    Err(e) => eprintln!("{eta_p} {eta_g} {mode} ERROR {e}"),
                }
            }
        }
    }
}
