//! End-to-end tests of the `malr` binary: the exit-code contract and the
//! plan/train/eval pipeline over the shipped synthetic fixtures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn malr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_malr"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/synthetic")
        .join(name)
}

fn run(command: &mut Command) -> Output {
    command.output().expect("binary runs")
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout(output),
        stderr(output)
    );
}

/// Runs plan and train into `dir` with the flawed scripted backend, returning
/// the subtasks and KB paths.
fn plan_and_train(dir: &Path) -> (PathBuf, PathBuf) {
    let subtasks = dir.join("subtasks.jsonl");
    let kb = dir.join("kb.jsonl");
    let output = run(malr()
        .args(["--backend", "scripted-flawed", "--flaw", "subject=state_functionary", "plan"])
        .arg("--train")
        .arg(fixture("train_cases.jsonl"))
        .arg("--rules")
        .arg(fixture("rules.jsonl"))
        .arg("--out")
        .arg(&subtasks));
    assert_exit(&output, 0);
    let output = run(malr()
        .args(["--backend", "scripted-flawed", "--flaw", "subject=state_functionary", "train"])
        .arg("--train")
        .arg(fixture("train_cases.jsonl"))
        .arg("--rules")
        .arg(fixture("rules.jsonl"))
        .arg("--subtasks")
        .arg(&subtasks)
        .arg("--kb")
        .arg(&kb));
    assert_exit(&output, 0);
    (subtasks, kb)
}

#[test]
fn test_missing_rules_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(malr()
        .arg("plan")
        .arg("--train")
        .arg(fixture("train_cases.jsonl"))
        .args(["--rules", "/nonexistent/rules.jsonl"])
        .arg("--out")
        .arg(dir.path().join("subtasks.jsonl")));
    assert_exit(&output, 3);
    assert!(stderr(&output).contains("/nonexistent/rules.jsonl"));
}

#[test]
fn test_unknown_strategy_exits_1_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(malr()
        .arg("eval")
        .arg("--cases")
        .arg(fixture("eval_cases.jsonl"))
        .args(["--strategy", "galaxy_brain"])
        .arg("--rules")
        .arg(fixture("rules.jsonl"))
        .arg("--report")
        .arg(dir.path().join("report.json")));
    assert_exit(&output, 1);
    let message = stderr(&output);
    assert!(message.contains("galaxy_brain"), "stderr: {message}");
    assert!(message.contains("zs_cot"), "stderr: {message}");
}

#[test]
fn test_clap_errors_exit_1_and_help_exits_0() {
    let output = run(malr().arg("--bogus-flag"));
    assert_exit(&output, 1);
    let output = run(malr().arg("no-such-command"));
    assert_exit(&output, 1);
    let output = run(malr().arg("--help"));
    assert_exit(&output, 0);
    assert!(stdout(&output).contains("plan"));
}

#[test]
fn test_infer_unknown_charge_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (subtasks, _) = plan_and_train(dir.path());
    let fact = dir.path().join("fact.txt");
    fs::write(&fact, "A fact sheet. [ATTR subject=state_functionary]\n").unwrap();
    let output = run(malr()
        .arg("infer")
        .arg("--fact")
        .arg(&fact)
        .args(["--charge", "NOT-A-CHARGE"])
        .arg("--rules")
        .arg(fixture("rules.jsonl"))
        .arg("--subtasks")
        .arg(&subtasks));
    assert_exit(&output, 3);
    assert!(stderr(&output).contains("NOT-A-CHARGE"));
}

#[test]
fn test_unreachable_http_backend_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("malr.toml");
    fs::write(
        &config,
        "[backend]\nkind = \"http\"\nendpoint = \"http://127.0.0.1:9/v1/complete\"\n\
         max_attempts = 1\nbackoff_base_ms = 1\n",
    )
    .unwrap();
    let output = run(malr()
        .arg("--config")
        .arg(&config)
        .arg("plan")
        .arg("--train")
        .arg(fixture("train_cases.jsonl"))
        .arg("--rules")
        .arg(fixture("rules.jsonl"))
        .arg("--out")
        .arg(dir.path().join("subtasks.jsonl")));
    assert_exit(&output, 2);
    assert!(stderr(&output).contains("unreachable"));
}

#[test]
fn test_deterministic_refuses_http_backend_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(malr()
        .args([
            "--deterministic",
            "--backend",
            "http",
            "--endpoint",
            "http://127.0.0.1:9/v1/complete",
            "plan",
        ])
        .arg("--train")
        .arg(fixture("train_cases.jsonl"))
        .arg("--rules")
        .arg(fixture("rules.jsonl"))
        .arg("--out")
        .arg(dir.path().join("subtasks.jsonl")));
    assert_exit(&output, 1);
    assert!(stderr(&output).contains("deterministic"));
}

#[test]
fn test_plan_train_eval_chain_on_synthetic_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let (subtasks, kb) = plan_and_train(dir.path());

    let subtask_lines = fs::read_to_string(&subtasks).unwrap().lines().count();
    assert_eq!(subtask_lines, 4);
    let kb_lines = fs::read_to_string(&kb).unwrap().lines().count();
    assert_eq!(kb_lines, 16);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("kb.report.json")).unwrap())
            .unwrap();
    assert_eq!(report["totals"]["resolved"], 32);
    assert_eq!(report["totals"]["unresolved"], 0);

    let eval_report = dir.path().join("report.json");
    let output = run(malr()
        .args(["--backend", "scripted-flawed", "--flaw", "subject=state_functionary", "eval"])
        .arg("--cases")
        .arg(fixture("eval_cases.jsonl"))
        .args(["--strategy", "malr"])
        .arg("--rules")
        .arg(fixture("rules.jsonl"))
        .arg("--subtasks")
        .arg(&subtasks)
        .arg("--kb")
        .arg(&kb)
        .arg("--report")
        .arg(&eval_report));
    assert_exit(&output, 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&eval_report).unwrap()).unwrap();
    assert_eq!(report["joint_accuracy"], 1.0);
    assert_eq!(report["strategy"], "malr");
}

#[test]
fn test_repeated_eval_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (subtasks, kb) = plan_and_train(dir.path());
    let mut reports = Vec::new();
    for name in ["first.json", "second.json"] {
        let report = dir.path().join(name);
        let output = run(malr()
            .args(["--backend", "scripted-flawed", "--flaw", "subject=state_functionary", "eval"])
            .arg("--cases")
            .arg(fixture("eval_cases.jsonl"))
            .args(["--strategy", "malr"])
            .arg("--rules")
            .arg(fixture("rules.jsonl"))
            .arg("--subtasks")
            .arg(&subtasks)
            .arg("--kb")
            .arg(&kb)
            .arg("--report")
            .arg(&report));
        assert_exit(&output, 0);
        reports.push(fs::read(&report).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn test_train_no_filter_keeps_duplicate_insights() {
    let dir = tempfile::tempdir().unwrap();
    let (subtasks, kb) = plan_and_train(dir.path());
    let unfiltered = dir.path().join("kb_unfiltered.jsonl");
    let output = run(malr()
        .args(["--backend", "scripted-flawed", "--flaw", "subject=state_functionary", "train"])
        .arg("--train")
        .arg(fixture("train_cases.jsonl"))
        .arg("--rules")
        .arg(fixture("rules.jsonl"))
        .arg("--subtasks")
        .arg(&subtasks)
        .arg("--kb")
        .arg(&unfiltered)
        .arg("--no-filter"));
    assert_exit(&output, 0);
    let filtered_lines = fs::read_to_string(&kb).unwrap().lines().count();
    let unfiltered_lines = fs::read_to_string(&unfiltered).unwrap().lines().count();
    assert!(unfiltered_lines > filtered_lines);
}

#[test]
fn test_kb_list_handles_empty_and_export_rejects_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let output = run(malr().args(["kb", "list", "--kb"]).arg(&empty));
    assert_exit(&output, 0);
    assert!(stdout(&output).contains("0 insight(s)"));

    let corrupt = dir.path().join("corrupt.jsonl");
    fs::write(&corrupt, "{\"not\": \"an insight\"}\n").unwrap();
    let output = run(malr().args(["kb", "export", "--kb"]).arg(&corrupt));
    assert_exit(&output, 3);
}

#[test]
fn test_kb_export_prints_the_file_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let (_, kb) = plan_and_train(dir.path());
    let output = run(malr().args(["kb", "export", "--kb"]).arg(&kb));
    assert_exit(&output, 0);
    assert_eq!(output.stdout, fs::read(&kb).unwrap());
}

#[test]
fn test_console_oracle_refused_in_batch_eval_without_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let (subtasks, kb) = plan_and_train(dir.path());
    let output = run(malr()
        .args([
            "--backend",
            "scripted-flawed",
            "--flaw",
            "subject=state_functionary",
            "--oracle",
            "console",
            "eval",
        ])
        .arg("--cases")
        .arg(fixture("eval_cases.jsonl"))
        .args(["--strategy", "malr"])
        .arg("--rules")
        .arg(fixture("rules.jsonl"))
        .arg("--subtasks")
        .arg(&subtasks)
        .arg("--kb")
        .arg(&kb)
        .arg("--report")
        .arg(dir.path().join("report.json")));
    assert_exit(&output, 1);
    assert!(stderr(&output).contains("--allow-console-oracle"));
}
