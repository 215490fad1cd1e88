//! End-to-end tests that drive the compiled `deepresearch` binary the way a
//! user would: real processes, real files, assertions on stdout and exit
//! codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_deepresearch"));
    // Keep ambient endpoint settings from leaking into offline tests.
    cmd.env_remove("MODEL_ENDPOINT").env_remove("MODEL_API_KEY");
    cmd
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap_or_else(|e| panic!("writing {}: {e}", path.display()));
}

fn stdout_json(output: &Output) -> serde_json::Value {
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
    let text = String::from_utf8(output.stdout.clone()).expect("stdout is UTF-8");
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stdout not JSON ({e}): {text}"))
}

fn script_line(raw: &str) -> String {
    serde_json::json!({ "raw": raw }).to_string()
}

fn tool_call(name: &str, args: serde_json::Value) -> String {
    format!(
        "<tool_call>{}</tool_call>",
        serde_json::json!({ "name": name, "arguments": args })
    )
}

fn corpus_json() -> String {
    serde_json::json!([
        {
            "title": "Paris",
            "url": "https://en.example.org/paris",
            "snippet": "Paris is the capital of France."
        },
        {
            "title": "Lyon",
            "url": "https://en.example.org/lyon",
            "snippet": "Lyon is a city in France on the Rhone."
        }
    ])
    .to_string()
}

/// Two-turn script: one search, then a committed answer.
fn capital_script() -> String {
    [
        script_line(&format!(
            "I should search. {}",
            tool_call("google_search", serde_json::json!({"query": "capital of France"}))
        )),
        script_line("<final_answer>Paris</final_answer>"),
    ]
    .join("\n")
}

#[test]
fn run_reports_the_scripted_answer() {
    let dir = TempDir::new().unwrap();
    write(&dir.path().join("corpus.json"), &corpus_json());
    write(&dir.path().join("script.jsonl"), &capital_script());

    let output = bin()
        .args(["run", "--query", "What is the capital of France?"])
        .arg("--script")
        .arg(dir.path().join("script.jsonl"))
        .arg("--corpus")
        .arg(dir.path().join("corpus.json"))
        .output()
        .unwrap();

    let report = stdout_json(&output);
    assert_eq!(report["answer"], "Paris");
    assert_eq!(report["source"], "model_final");
    assert_eq!(report["episode"], 1);
    assert_eq!(report["total_steps"], 2, "search step plus answer step");
    assert_eq!(report["episodes"], 1);
}

#[test]
fn run_trajectories_are_byte_identical_across_reruns() {
    let dir = TempDir::new().unwrap();
    write(&dir.path().join("corpus.json"), &corpus_json());
    write(&dir.path().join("script.jsonl"), &capital_script());

    let run = |out: &str| {
        let output = bin()
            .args(["run", "--query", "What is the capital of France?"])
            .arg("--script")
            .arg(dir.path().join("script.jsonl"))
            .arg("--corpus")
            .arg(dir.path().join("corpus.json"))
            .arg("--out")
            .arg(dir.path().join(out))
            .output()
            .unwrap();
        stdout_json(&output);
        fs::read_to_string(dir.path().join(out)).unwrap()
    };

    let first = run("a.jsonl");
    let second = run("b.jsonl");
    assert_eq!(first, second, "same inputs must produce identical bytes");

    let lines: Vec<&str> = first.lines().collect();
    assert!(lines.len() >= 3, "two steps and a summary:\n{first}");
    for line in &lines {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = value.as_object().unwrap();
        if obj.contains_key("record") {
            continue;
        }
        // Step lines carry exactly the frozen field set.
        let mut keys: Vec<&str> = obj.keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            ["action", "episode", "index", "observation", "thought"],
            "unexpected step shape: {line}"
        );
    }
    let last: serde_json::Value = serde_json::from_str(lines.last().unwrap()).unwrap();
    assert_eq!(last["record"], "summary", "the summary closes the file");
    assert_eq!(last["answer"], "Paris");
}

#[test]
fn run_with_local_verify_interleaves_the_auditor() {
    let dir = TempDir::new().unwrap();
    write(&dir.path().join("corpus.json"), &corpus_json());
    // Queue order: agent's tool call, the auditor's verdict on that call,
    // then the agent's answer. One queue serves both roles.
    let script = [
        script_line(&format!(
            "Searching. {}",
            tool_call("google_search", serde_json::json!({"query": "capital of France"}))
        )),
        script_line("<final_answer>approve</final_answer>"),
        script_line("<final_answer>Paris</final_answer>"),
    ]
    .join("\n");
    write(&dir.path().join("script.jsonl"), &script);

    let output = bin()
        .args(["run", "--query", "What is the capital of France?"])
        .args(["--verify", "local"])
        .arg("--script")
        .arg(dir.path().join("script.jsonl"))
        .arg("--corpus")
        .arg(dir.path().join("corpus.json"))
        .arg("--out")
        .arg(dir.path().join("traj.jsonl"))
        .output()
        .unwrap();

    let report = stdout_json(&output);
    assert_eq!(report["answer"], "Paris");

    let trajectory = fs::read_to_string(dir.path().join("traj.jsonl")).unwrap();
    let verdicts: Vec<serde_json::Value> = trajectory
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .filter(|v: &serde_json::Value| v["record"] == "verdict")
        .collect();
    assert_eq!(verdicts.len(), 1, "one audited call:\n{trajectory}");
    assert_eq!(verdicts[0]["decision"], "approve");
}

#[test]
fn run_with_global_verify_reports_completeness() {
    let dir = TempDir::new().unwrap();
    write(&dir.path().join("corpus.json"), &corpus_json());
    let claim_sheet = serde_json::json!({
        "claims": [{ "text": "Paris is the capital of France", "support": [1] }]
    })
    .to_string();
    // The sheet appears twice: once for candidate scoring, once for the
    // chain record appended to the trajectory.
    let script = [
        script_line(&format!(
            "Searching. {}",
            tool_call("google_search", serde_json::json!({"query": "capital of France"}))
        )),
        script_line("<final_answer>Paris</final_answer>"),
        script_line(&format!("<final_answer>{claim_sheet}</final_answer>")),
        script_line(&format!("<final_answer>{claim_sheet}</final_answer>")),
    ]
    .join("\n");
    write(&dir.path().join("script.jsonl"), &script);

    let output = bin()
        .args(["run", "--query", "What is the capital of France?"])
        .args(["--verify", "global"])
        .arg("--script")
        .arg(dir.path().join("script.jsonl"))
        .arg("--corpus")
        .arg(dir.path().join("corpus.json"))
        .arg("--out")
        .arg(dir.path().join("traj.jsonl"))
        .output()
        .unwrap();

    let report = stdout_json(&output);
    assert_eq!(report["answer"], "Paris");
    assert_eq!(report["completeness"], 1.0);
    assert_eq!(
        report["candidates_considered"], 1,
        "only the initial answer was audited; it met the threshold"
    );

    let trajectory = fs::read_to_string(dir.path().join("traj.jsonl")).unwrap();
    let chain: serde_json::Value = trajectory
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .find(|v: &serde_json::Value| v["record"] == "chain")
        .expect("trajectory carries the audited chain");
    assert_eq!(chain["completeness"], 1.0);
}

#[test]
fn objective_reproduces_pinned_values() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (
            "dpo.jsonl",
            r#"{"pairs": [{"policy_chosen": -1.0, "policy_rejected": -2.5, "ref_chosen": -1.2, "ref_rejected": -1.2}]}"#,
            "dpo",
            "0.6209570477895321",
        ),
        (
            "reward.jsonl",
            r#"{"outcomes": [{"correct": true}, {"correct": false, "format_violation": true}]}"#,
            "reward",
            "0.25",
        ),
        (
            "advantages.jsonl",
            r#"{"rewards": [1.0, 0.5, -0.5, 1.0]}"#,
            "advantages",
            "[0.5,0.0,-1.0,0.5]",
        ),
    ];
    for (file, fixture, op, expected) in cases {
        write(&dir.path().join(file), fixture);
        let output = bin()
            .args(["objective", "--op", op])
            .arg("--fixture")
            .arg(dir.path().join(file))
            .output()
            .unwrap();
        assert!(output.status.success(), "op {op} failed");
        let stdout = String::from_utf8(output.stdout).unwrap();
        assert_eq!(stdout.trim(), expected, "op {op}");
    }
}

#[test]
fn objective_rejects_bad_input_with_line_numbers() {
    let dir = TempDir::new().unwrap();
    write(
        &dir.path().join("fixture.jsonl"),
        r#"{"rewards": [1.0, -1.0]}"#,
    );

    let output = bin()
        .args(["objective", "--op", "bogus"])
        .arg("--fixture")
        .arg(dir.path().join("fixture.jsonl"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("unknown op 'bogus'"), "stderr: {stderr}");

    // A valid op on the wrong fixture shape points at the offending line.
    let output = bin()
        .args(["objective", "--op", "dpo"])
        .arg("--fixture")
        .arg(dir.path().join("fixture.jsonl"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("line 1"), "stderr: {stderr}");
}

#[test]
fn run_without_a_model_source_fails_with_guidance() {
    let output = bin().args(["run", "--query", "anything"]).output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("no model backend"), "stderr: {stderr}");
    assert!(stderr.contains("--script"), "stderr: {stderr}");
}

fn bench_fixtures(dir: &Path) {
    write(&dir.join("corpus.json"), &corpus_json());
    write(
        &dir.join("bench.json"),
        &serde_json::json!({
            "name": "smoke",
            "trials": 2,
            "judge": "normalized",
            "tasks": [
                {
                    "id": "capital",
                    "question": "What is the capital of France?",
                    "reference": "Paris"
                },
                {
                    "id": "city",
                    "question": "Which French city sits on the Rhone?",
                    "reference": "Lyon"
                }
            ]
        })
        .to_string(),
    );
    let scripts = dir.join("scripts");
    fs::create_dir_all(&scripts).unwrap();
    // "capital" shares one script across trials; "city" answers correctly on
    // trial 1 only, pinning the 50% path.
    write(&scripts.join("capital.jsonl"), &capital_script());
    write(
        &scripts.join("city-1.jsonl"),
        &script_line("<final_answer>Lyon</final_answer>"),
    );
    write(
        &scripts.join("city-2.jsonl"),
        &script_line("<final_answer>Marseille</final_answer>"),
    );
}

#[test]
fn bench_writes_metrics_and_trajectories() {
    let dir = TempDir::new().unwrap();
    bench_fixtures(dir.path());

    let run = |metrics: &str, trajectories: &str| {
        let output = bin()
            .arg("bench")
            .arg("--config")
            .arg(dir.path().join("bench.json"))
            .arg("--script-dir")
            .arg(dir.path().join("scripts"))
            .arg("--corpus")
            .arg(dir.path().join("corpus.json"))
            .arg("--out")
            .arg(dir.path().join(metrics))
            .arg("--trajectories")
            .arg(dir.path().join(trajectories))
            .args(["--workers", "2"])
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "bench failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        fs::read_to_string(dir.path().join(metrics)).unwrap()
    };

    let first = run("metrics-a.json", "trajs-a");
    let second = run("metrics-b.json", "trajs-b");
    assert_eq!(first, second, "metrics must reproduce byte-for-byte");

    let metrics: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(metrics["benchmark"], "smoke");
    assert_eq!(metrics["trials_per_task"], 2);
    assert_eq!(metrics["score"], 75.0, "(100 + 50) / 2");
    let tasks = metrics["tasks"].as_array().unwrap();
    let score_of = |id: &str| {
        tasks
            .iter()
            .find(|t| t["task_id"] == id)
            .unwrap_or_else(|| panic!("missing task {id}"))["score"]
            .clone()
    };
    assert_eq!(score_of("capital"), 100.0);
    assert_eq!(score_of("city"), 50.0);

    // One trajectory file per (task, trial).
    for name in ["capital-1", "capital-2", "city-1", "city-2"] {
        let path = dir.path().join("trajs-a").join(format!("{name}.jsonl"));
        let text = fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("missing trajectory {}: {e}", path.display()));
        assert!(text.lines().count() >= 2, "{name} too short");
    }
}

#[test]
fn bench_contains_missing_scripts_to_their_own_trials() {
    let dir = TempDir::new().unwrap();
    bench_fixtures(dir.path());
    fs::remove_file(dir.path().join("scripts/city-2.jsonl")).unwrap();

    let output = bin()
        .arg("bench")
        .arg("--config")
        .arg(dir.path().join("bench.json"))
        .arg("--script-dir")
        .arg(dir.path().join("scripts"))
        .arg("--corpus")
        .arg(dir.path().join("corpus.json"))
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "a missing script fails its trial, not the suite: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    let metrics: serde_json::Value = stdout_json(&output);
    let tasks = metrics["tasks"].as_array().unwrap();
    let city = tasks.iter().find(|t| t["task_id"] == "city").unwrap();
    assert_eq!(city["score"], 50.0, "trial 1 still counts");
    let trial2 = city["trials"]
        .as_array()
        .unwrap()
        .iter()
        .find(|t| t["trial"] == 2)
        .unwrap();
    assert_eq!(trial2["completed"], false);
    assert!(
        trial2["rationale"]
            .as_str()
            .unwrap()
            .contains("no script for task 'city' trial 2"),
        "rationale: {}",
        trial2["rationale"]
    );
}
