//! Guards the shipped fixture files against drift from the corpus generator.

use std::path::{Path, PathBuf};

use malr_core::{load_cases, save_cases, synthetic, RuleKB};

fn fixture_dir() -> PathBuf {
    PathBuf::from(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../fixtures/synthetic"
    ))
}

fn regenerated(write: impl FnOnce(&Path)) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.jsonl");
    write(&path);
    std::fs::read(&path).unwrap()
}

#[test]
fn shipped_fixtures_match_the_generator() {
    let corpus = synthetic::generate_corpus();
    let expectations: [(&str, Vec<u8>); 4] = [
        (
            "rules.jsonl",
            regenerated(|p| {
                RuleKB::from_rules(corpus.rules.clone())
                    .unwrap()
                    .save_jsonl(p)
                    .unwrap()
            }),
        ),
        (
            "train_cases.jsonl",
            regenerated(|p| save_cases(p, &corpus.train_cases).unwrap()),
        ),
        (
            "eval_cases.jsonl",
            regenerated(|p| save_cases(p, &corpus.eval_cases).unwrap()),
        ),
        (
            "innocent_cases.jsonl",
            regenerated(|p| save_cases(p, &corpus.innocent_cases).unwrap()),
        ),
    ];
    for (name, expected) in expectations {
        let shipped = std::fs::read(fixture_dir().join(name))
            .unwrap_or_else(|e| panic!("fixture {name} unreadable: {e}"));
        assert_eq!(
            shipped, expected,
            "fixtures/synthetic/{name} differs from the generator output; \
             rerun `cargo run -p malr-core --example regenerate_fixtures`"
        );
    }
}

#[test]
fn shipped_fixtures_load_cleanly() {
    let dir = fixture_dir();
    let rules = RuleKB::load_jsonl(&dir.join("rules.jsonl")).unwrap();
    assert_eq!(rules.len(), 16);
    for name in ["train_cases.jsonl", "eval_cases.jsonl", "innocent_cases.jsonl"] {
        let cases = load_cases(&dir.join(name), &rules).unwrap();
        assert!(!cases.is_empty(), "{name} is empty");
    }
}
