//! Generates a draft/target pair, writes both tables to disk, reloads them
//! and checks the round trip is exact.
//!
//! `cargo run --example model_files`

use multidraft::model::{load_model, GenSpec, ModelPair, SequenceModel};
use multidraft::prob::{tv_distance, TokenId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("multidraft-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let (draft_path, target_path) = (dir.join("draft.json"), dir.join("target.json"));

    let gen: GenSpec = "6,2,11,0.8,0.5".parse()?;
    let pair = ModelPair::generate(&gen, 1.0)?;
    pair.draft.save(&draft_path)?;
    pair.target.save(&target_path)?;

    let draft = load_model(&draft_path)?;
    assert_eq!(&draft, pair.draft.as_ref());
    let reloaded = ModelPair::load(&draft_path, &target_path, 0.7)?;
    println!("wrote {} and {}", draft_path.display(), target_path.display());
    println!("V = {}, order = {}, rows = {}", draft.vocab_size(), draft.order(), draft.rows().len());

    let ctx = [TokenId(1), TokenId(4)];
    let p = reloaded.draft_view().conditional(&ctx);
    let q = reloaded.target_view().conditional(&ctx);
    println!("after {ctx:?} at T = 0.7: TV(p, q) = {:.4}", tv_distance(&p, &q));

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
