//! Exact enumeration of the output law on a tiny instance, compared with the
//! target and with the expected-length bound.
//!
//! `cargo run --example exact_oracle`

use multidraft::model::ModelPair;
use multidraft::oracle::{bound_properties, exact_output_distribution, OracleAlgorithm};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pair = ModelPair::canonical();
    let l = 2;
    for k in [1, 2, 3] {
        let rep = exact_output_distribution(&pair, &[], l, k, 1, OracleAlgorithm::SpectrGbv)?;
        println!(
            "K = {k}: E[tau] = {:.9}, bound = {:.9}, max marginal deviation from target = {:.3e}",
            rep.expected_tau, rep.bound, rep.max_marginal_dev
        );
    }

    let rep = exact_output_distribution(&pair, &[], l, 2, 1, OracleAlgorithm::SpectrGbv)?;
    println!("output law at K = 2 (first {} tokens):", l + 1);
    for (seq, mass) in &rep.output {
        println!("  {seq:?}: {mass:.6}");
    }

    let bp = bound_properties(&pair, &[], l, &[1, 2, 4, 8, 16, 32, 64])?;
    for (k, b) in &bp.values {
        println!("bound(K = {k:>2}) = {b:.9}");
    }
    println!("increasing: {}, below L: {}, gap shrinking: {}", bp.strictly_increasing, bp.within_l, bp.gap_decreasing);
    Ok(())
}
