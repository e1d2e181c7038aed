//! Grid sweep over K and L, aggregated per configuration.
//!
//! `cargo run --release --example sweep_k_l`

use multidraft::harness::{run_cells, ExperimentSpec, RunMetrics};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ExperimentSpec::from_config_text(
        "algo = spectr-gbv\nK = 1,3,5,7\nL = 2,4,8\ngen = 12,1,5,0.5,0.6\nprompts = 8\nmax-tokens = 96\nstop-at-eos = false",
    )?;
    let configs = spec.configs()?;
    let rows = run_cells(&configs)?;

    println!("{:>3} {:>3} {:>10} {:>11} {:>10}", "K", "L", "mean tau", "accept rate", "block eff.");
    for cfg in &configs {
        let mut total = RunMetrics::default();
        for r in rows.iter().filter(|r| r.k == cfg.k && r.l == cfg.l) {
            total += r.metrics;
        }
        println!(
            "{:>3} {:>3} {:>10.3} {:>11.3} {:>10.3}",
            cfg.k,
            cfg.l,
            total.mean_tau(),
            total.accept_rate(),
            total.block_efficiency()
        );
    }
    Ok(())
}
