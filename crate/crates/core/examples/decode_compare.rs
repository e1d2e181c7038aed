//! Paired decoding comparison of the speculative verifiers on a random
//! Markov pair.
//!
//! `cargo run --release --example decode_compare`

use multidraft::harness::{compare_algorithms, CompareSpec};
use multidraft::model::{GenSpec, ModelPair};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gen: GenSpec = "16,1,3,0.5,0.6".parse()?;
    let pair = ModelPair::generate(&gen, 1.0)?;
    let mut spec = CompareSpec::new(pair, 3, 4);
    spec.trials = 40;
    let rep = compare_algorithms(&spec)?;

    println!("{:>11} {:>22} {:>22}", "algo", "mean tau (95% CI)", "block eff. (95% CI)");
    for s in &rep.summaries {
        println!(
            "{:>11} {:>7.3} [{:.3}, {:.3}] {:>7.3} [{:.3}, {:.3}]",
            s.algo.name(),
            s.mean_tau,
            s.mean_tau_ci.0,
            s.mean_tau_ci.1,
            s.block_efficiency,
            s.block_efficiency_ci.0,
            s.block_efficiency_ci.1
        );
    }
    for v in &rep.violations {
        println!("ordering violated: {v}");
    }
    Ok(())
}
