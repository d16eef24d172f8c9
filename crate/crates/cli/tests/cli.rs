//! End-to-end tests for the `hiernet` binary: every subcommand is driven
//! against the shipped fixture files and checked for output and exit code.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::{json, Value};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

/// Runs the binary with the given arguments, where any argument equal to a
/// fixture name is resolved first by the caller.
fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiernet"))
        .args(args)
        .output()
        .expect("the binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("stdout is UTF-8")
}

fn stderr(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).expect("stderr is UTF-8")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("the binary exits normally")
}

fn path(p: &PathBuf) -> &str {
    p.to_str().expect("paths are UTF-8")
}

#[test]
fn validate_reports_the_root_net() {
    let out = run(&["validate", path(&fixture("flat-fork.json"))]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("flat net"), "got: {text}");
    assert!(text.contains("4 places"), "got: {text}");

    let out = run(&["validate", path(&fixture("hier-chain-fork.json")), "--json"]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_str(&stdout(&out)).expect("json output parses");
    assert_eq!(v["kind"], "hierarchical");
    assert_eq!(v["root"], "parent");
    assert_eq!(v["nets"], 3);
    assert_eq!(v["places"], 3);
    assert_eq!(v["transitions"], 2);
}

#[test]
fn validate_rejects_broken_bundles_with_a_usage_exit() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"places": ["A", "A"], "transitions": []}"#).unwrap();
    let out = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).starts_with("error: "), "got: {}", stderr(&out));
}

#[test]
fn fire_advances_a_flat_marking() {
    let out = run(&[
        "fire",
        path(&fixture("flat-fork.json")),
        "--marking",
        path(&fixture("flat-fork-start.json")),
        "--transition",
        "t",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert_eq!(stdout(&out), "{p2: 2, p3: 2}\n");
}

#[test]
fn fire_rejections_exit_with_one() {
    let out = run(&[
        "fire",
        path(&fixture("flat-fork.json")),
        "--marking",
        path(&fixture("flat-fork-to.json")),
        "--transition",
        "t",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("not enabled"), "got: {}", stderr(&out));
}

#[test]
fn fire_with_an_invalid_marking_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let off_net = dir.path().join("marking.json");
    std::fs::write(&off_net, r#"{"nowhere": 1}"#).unwrap();
    let out = run(&[
        "fire",
        path(&fixture("flat-fork.json")),
        "--marking",
        off_net.to_str().unwrap(),
        "--transition",
        "t",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown place"), "got: {}", stderr(&out));
}

#[test]
fn flat_nets_take_no_witness() {
    let out = run(&[
        "fire",
        path(&fixture("flat-fork.json")),
        "--marking",
        path(&fixture("flat-fork-start.json")),
        "--transition",
        "t",
        "--witness",
        path(&fixture("hier-chain-fork-witness-t1.json")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no --witness"), "got: {}", stderr(&out));
}

#[test]
fn hierarchical_fire_checks_the_witness() {
    let out = run(&[
        "fire",
        path(&fixture("hier-chain-fork.json")),
        "--marking",
        path(&fixture("hier-chain-fork-start.json")),
        "--transition",
        "t1",
        "--witness",
        path(&fixture("hier-chain-fork-witness-t1.json")),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert_eq!(stdout(&out), "{P2: 1}\n");

    // Omitting the witness is a usage error, not a rejection.
    let out = run(&[
        "fire",
        path(&fixture("hier-chain-fork.json")),
        "--marking",
        path(&fixture("hier-chain-fork-start.json")),
        "--transition",
        "t1",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--witness"), "got: {}", stderr(&out));
}

#[test]
fn replay_runs_a_recorded_execution_to_its_end() {
    let out = run(&[
        "replay",
        path(&fixture("flat-fork.json")),
        "--execution",
        path(&fixture("flat-fork-run.json")),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert_eq!(stdout(&out), "{p2: 1, p3: 2, p4: 2}\n");

    let out = run(&[
        "replay",
        path(&fixture("hier-chain-fork.json")),
        "--execution",
        path(&fixture("hier-chain-fork-run.json")),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert_eq!(stdout(&out), "{P3: 1}\n");
}

#[test]
fn replay_reports_the_failing_step() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("run.json");
    std::fs::write(
        &broken,
        json!({"start": {"p1": 1}, "steps": ["t", "t"]}).to_string(),
    )
    .unwrap();
    let out = run(&[
        "replay",
        path(&fixture("flat-fork.json")),
        "--execution",
        broken.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("step 1"), "got: {}", stderr(&out));
}

#[test]
fn guarded_replay_folds_witnessed_steps() {
    let dir = tempfile::tempdir().unwrap();
    let run_file = dir.path().join("run.json");
    std::fs::write(
        &run_file,
        json!({
            "start": {"shape": {"A": 1}, "state": ["blue"]},
            "steps": [{"transition": "f", "witness": "s1"}],
        })
        .to_string(),
    )
    .unwrap();
    let out = run(&[
        "replay",
        path(&fixture("colored-chain.json")),
        "--execution",
        run_file.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert_eq!(stdout(&out), "{B: 1} @ [green]\n");
}

#[test]
fn reach_prints_the_shortest_step_sequence() {
    let out = run(&[
        "reach",
        path(&fixture("flat-fork.json")),
        "--from",
        path(&fixture("flat-fork-from.json")),
        "--to",
        path(&fixture("flat-fork-to.json")),
        "--bound",
        "5",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert_eq!(stdout(&out), "[t, v, u]\n");
}

#[test]
fn unreachable_targets_exit_with_one() {
    // The reversed direction cannot be realized: nothing produces p1.
    let out = run(&[
        "reach",
        path(&fixture("flat-fork.json")),
        "--from",
        path(&fixture("flat-fork-to.json")),
        "--to",
        path(&fixture("flat-fork-from.json")),
        "--bound",
        "5",
    ]);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout(&out), "not reachable within bound 5\n");

    let out = run(&[
        "--json",
        "reach",
        path(&fixture("flat-fork.json")),
        "--from",
        path(&fixture("flat-fork-to.json")),
        "--to",
        path(&fixture("flat-fork-from.json")),
        "--bound",
        "5",
    ]);
    assert_eq!(code(&out), 1);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v, json!({"reachable": false, "bound": 5}));
}

#[test]
fn guarded_reach_respects_token_states() {
    // Every route from A to C is cut: the states produced into B never
    // match the states consumed from it.
    let out = run(&[
        "reach",
        path(&fixture("colored-chain.json")),
        "--from",
        path(&fixture("colored-chain-from.json")),
        "--to",
        path(&fixture("colored-chain-to.json")),
        "--bound",
        "10",
    ]);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout(&out), "not reachable within bound 10\n");
}

#[test]
fn hierarchical_reach_needs_a_child_bound() {
    let out = run(&[
        "reach",
        path(&fixture("hier-chain-fork.json")),
        "--from",
        path(&fixture("hier-chain-fork-from.json")),
        "--to",
        path(&fixture("hier-chain-fork-to.json")),
        "--bound",
        "3",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--child-bound"), "got: {}", stderr(&out));

    let out = run(&[
        "--json",
        "reach",
        path(&fixture("hier-chain-fork.json")),
        "--from",
        path(&fixture("hier-chain-fork-from.json")),
        "--to",
        path(&fixture("hier-chain-fork-to.json")),
        "--bound",
        "3",
        "--child-bound",
        "1",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["reachable"], true);
    assert_eq!(v["length"], 1);
}

#[test]
fn child_bound_is_refused_outside_hierarchical_bundles() {
    let out = run(&[
        "reach",
        path(&fixture("flat-fork.json")),
        "--from",
        path(&fixture("flat-fork-from.json")),
        "--to",
        path(&fixture("flat-fork-to.json")),
        "--bound",
        "3",
        "--child-bound",
        "1",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("hierarchical"), "got: {}", stderr(&out));
}

#[test]
fn internalized_output_is_itself_a_loadable_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out_file = dir.path().join("flat.json");
    let out = run(&[
        "internalize",
        path(&fixture("hier-chain-fork.json")),
        "--child-bound",
        "0",
        "--out",
        out_file.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let out = run(&["validate", out_file.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("flat net"), "got: {}", stdout(&out));
}

#[test]
fn internalize_counts_and_exports_pnml() {
    let dir = tempfile::tempdir().unwrap();
    let out_file = dir.path().join("flat.json");
    let pnml_file = dir.path().join("flat.pnml");
    let out = run(&[
        "--json",
        "internalize",
        path(&fixture("three-paths.json")),
        "--out",
        out_file.to_str().unwrap(),
        "--pnml",
        pnml_file.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["places"], 7);
    assert_eq!(v["transitions"], 3);
    let pnml = std::fs::read_to_string(&pnml_file).unwrap();
    assert!(pnml.contains("<pnml"), "got: {pnml}");
}

#[test]
fn internalize_refuses_a_flat_root() {
    let dir = tempfile::tempdir().unwrap();
    let out_file = dir.path().join("flat.json");
    let out = run(&[
        "internalize",
        path(&fixture("flat-fork.json")),
        "--out",
        out_file.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("already flat"), "got: {}", stderr(&out));
}

#[test]
fn simulate_runs_a_session_and_persists_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.jsonl");
    let out = run(&[
        "simulate",
        "--ledger",
        ledger.to_str().unwrap(),
        "--script",
        path(&fixture("scripts/session.jsonl")),
    ]);
    // The script ends with a rejected firing, so the run exits with 1.
    assert_eq!(code(&out), 1, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("1: registered"), "got: {text}");
    assert!(text.contains("3: accepted; state {P1: 1, P2: 1}"), "got: {text}");
    assert!(text.contains("4: rejected:"), "got: {text}");

    let log = std::fs::read_to_string(&ledger).unwrap();
    assert_eq!(log.lines().count(), 4);

    // The persisted log replays: an empty follow-up run succeeds.
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = run(&[
        "simulate",
        "--ledger",
        ledger.to_str().unwrap(),
        "--script",
        empty.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
}

#[test]
fn simulate_emits_full_records_in_json_mode() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.jsonl");
    let out = run(&[
        "--json",
        "simulate",
        "--ledger",
        ledger.to_str().unwrap(),
        "--script",
        path(&fixture("scripts/session-mixed.jsonl")),
    ]);
    assert_eq!(code(&out), 1);
    let lines: Vec<Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).expect("each line is a record"))
        .collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0]["outcome"]["status"], "registered");
    assert_eq!(lines[1]["outcome"]["status"], "accepted");
    assert_eq!(lines[2]["outcome"]["status"], "rejected");
    assert_eq!(lines[4]["outcome"]["state"], json!({"p2": 2, "p3": 2}));
    for (at, line) in lines.iter().enumerate() {
        assert_eq!(line["seq"], at as u64 + 1);
        assert!(line["state_hash"].is_string());
    }
}

#[test]
fn simulate_rejects_malformed_scripts_before_touching_the_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.jsonl");
    let script = dir.path().join("script.jsonl");
    std::fs::write(
        &script,
        "{\"from\":\"a\",\"to\":\"b\",\"command\":\"fire\",\"data\":\"\"}\nnot json\n",
    )
    .unwrap();
    let out = run(&[
        "simulate",
        "--ledger",
        ledger.to_str().unwrap(),
        "--script",
        script.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains(":2:"), "got: {}", stderr(&out));
    assert!(!ledger.exists(), "a bad script must not create the ledger");
}

#[test]
fn simulate_refuses_a_log_that_replays_differently() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.jsonl");
    let out = run(&[
        "simulate",
        "--ledger",
        ledger.to_str().unwrap(),
        "--script",
        path(&fixture("scripts/session.jsonl")),
    ]);
    assert_eq!(code(&out), 1);

    // The logged outcomes depend on the persistent-child policy; replaying
    // them under the reset policy diverges and is refused.
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = run(&[
        "simulate",
        "--ledger",
        ledger.to_str().unwrap(),
        "--script",
        empty.to_str().unwrap(),
        "--policy",
        "reset",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("disagrees"), "got: {}", stderr(&out));
}

#[test]
fn serve_answers_each_line_and_survives_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.jsonl");
    let script = std::fs::read_to_string(fixture("scripts/session.jsonl")).unwrap();
    let input = format!("{script}not json at all\n");

    let mut child = Command::new(env!("CARGO_BIN_EXE_hiernet"))
        .args(["serve", "--ledger", ledger.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("the binary runs");
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let lines: Vec<Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).expect("each answer is JSON"))
        .collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0]["status"], "registered");
    assert_eq!(lines[2]["status"], "accepted");
    assert_eq!(lines[3]["status"], "rejected");
    assert!(lines[4]["error"].as_str().unwrap().contains("malformed"), "got: {:?}", lines[4]);

    // Only well-formed messages were logged, and the log replays.
    assert_eq!(std::fs::read_to_string(&ledger).unwrap().lines().count(), 4);
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = run(&[
        "simulate",
        "--ledger",
        ledger.to_str().unwrap(),
        "--script",
        empty.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
}

#[test]
fn missing_files_are_usage_errors() {
    let out = run(&["validate", "/nonexistent/bundle.json"]);
    assert_eq!(code(&out), 2);

    let out = run(&[
        "reach",
        path(&fixture("flat-fork.json")),
        "--from",
        "/nonexistent/marking.json",
        "--to",
        path(&fixture("flat-fork-to.json")),
        "--bound",
        "3",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("start marking"), "got: {}", stderr(&out));
}
