//! Solves the K-SEQ scale ρ by bisection and shows how the iteration count
//! grows as the tolerance tightens.
//!
//! `cargo run --example rho_fixed_point`

use multidraft::prob::Distribution;
use multidraft::verify::{kseq_rho, kseq_rho_with_tolerance};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = Distribution::new(vec![0.5, 0.5])?;
    let q = Distribution::new(vec![0.8, 0.2])?;

    for k in [1, 2, 4, 8, 16] {
        let s = kseq_rho(&p, &q, k)?;
        let gap = 1.0 - (1.0 - s.beta).powi(k as i32) - s.rho * s.beta;
        println!("K = {k:>2}: rho = {:.12}, beta = {:.6}, residual {gap:+.1e}", s.rho, s.beta);
    }
    println!("closed form at K = 2: {:.12}", (1.5 + 1.45f64.sqrt()) / 2.0);

    for tol in [1e-3, 1e-6, 1e-9, 1e-12] {
        let s = kseq_rho_with_tolerance(&p, &q, 2, tol)?;
        println!("tol {tol:.0e}: {} iterations", s.iterations);
    }
    Ok(())
}
