//! Regenerates the synthetic-corpus fixture files.
//!
//! The corpus generator is deterministic, so rewriting the files is always
//! safe; the `shipped_fixtures_match_the_generator` test fails if the files
//! and the generator ever drift apart.
//!
//! ```text
//! cargo run -p malr-core --example regenerate_fixtures
//! ```

use std::path::PathBuf;

use malr_core::{save_cases, synthetic, RuleKB};

fn main() -> malr_core::Result<()> {
    let dir = PathBuf::from(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../fixtures/synthetic"
    ));
    std::fs::create_dir_all(&dir).expect("fixture directory must be creatable");

    let corpus = synthetic::generate_corpus();
    RuleKB::from_rules(corpus.rules.clone())?.save_jsonl(&dir.join("rules.jsonl"))?;
    save_cases(&dir.join("train_cases.jsonl"), &corpus.train_cases)?;
    save_cases(&dir.join("eval_cases.jsonl"), &corpus.eval_cases)?;
    save_cases(&dir.join("innocent_cases.jsonl"), &corpus.innocent_cases)?;
    println!("wrote synthetic fixtures to {}", dir.display());
    Ok(())
}
