//! Verifies one draft set with each verifier and prints what was accepted.
//!
//! `cargo run --example basic_verification`

use multidraft::model::ModelPair;
use multidraft::prob::RandomSource;
use multidraft::verify::{verify_gbv, verify_kseq, verify_sd, verify_spectr_gbv, DraftSet, TargetScores};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pair = ModelPair::canonical();
    let (k, l) = (3, 4);
    let mut rng = RandomSource::new(7);
    let drafts = DraftSet::draw(&pair.draft_view(), &[], k, l, &mut rng);
    let scores = TargetScores::score(&pair.target_view(), &[], &drafts);
    for (i, row) in drafts.rows().iter().enumerate() {
        println!("row {i}: {row:?}");
    }

    let single = (drafts.single_row(0), scores.single_row(0));
    let outcomes = [
        ("sd", verify_sd(&single.0, &single.1, &mut rng)),
        ("spectr", verify_kseq(&drafts, &scores, &mut rng)?),
        ("gbv", verify_gbv(&single.0, &single.1, &mut rng).0),
        ("spectr-gbv", verify_spectr_gbv(&drafts, &scores, &mut rng).0),
    ];
    for (name, out) in outcomes {
        println!(
            "{name:>10}: tau = {}, row = {}, emitted = {:?}, vocab scans = {}",
            out.tau,
            out.f,
            out.emitted(),
            out.counters.vocab_scans
        );
    }
    Ok(())
}
