use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn planbudget(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_planbudget"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn allocate_bam_and_uq() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("alloc.json"), r#"{"B": 100, "scores": [1, 1, 1, 1, 1], "kind": "exponential", "gamma": 0.9}"#).unwrap();
    let v = stdout_json(&planbudget(&["allocate", "alloc.json"], p));
    assert_eq!(v["budgets"], serde_json::json!([24, 22, 20, 18, 16]));

    std::fs::write(p.join("bam.json"), r#"{"B": 10, "items": [{"c": 1, "beta": 1}, {"c": 1, "beta": 2}]}"#).unwrap();
    let v = stdout_json(&planbudget(&["bam", "bam.json"], p));
    let b: Vec<f64> = serde_json::from_value(v["kkt"]["budgets"].clone()).unwrap();
    assert!((b[0] - 5.8906).abs() < 1e-3 && (b[1] - 4.1094).abs() < 1e-3, "{b:?}");

    std::fs::write(p.join("uq.json"), r#"{"members": [[1, 0], [0, 1]], "base": "bits"}"#).unwrap();
    let v = stdout_json(&planbudget(&["uq", "uq.json"], p));
    assert_eq!((v["total"].as_f64(), v["aleatoric"].as_f64(), v["epistemic"].as_f64()), (Some(1.0), Some(0.0), Some(1.0)));

    let out = planbudget(&["allocate", "missing.json"], p);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_tables_bundled_and_custom() {
    let dir = tempfile::tempdir().unwrap();
    let out = planbudget(&["verify-tables"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("120 of 120 rows"));

    std::fs::write(dir.path().join("bad.csv"), "dataset,score,tokens,e3\nmath500,89.76,2105.12,9.99\n").unwrap();
    let out = planbudget(&["verify-tables", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("d.jsonl"), "{\"id\": \"a\", \"question\": \"2+2?\", \"answer\": \"4\", \"level\": 1}\n").unwrap();
    std::fs::write(
        p.join("script.json"),
        r#"{"rules": [{"contains": "Decomposed Sub-questions:", "response": "1. Add.\nHint: sum", "tokens": 6, "repeat": 0},
                      {"contains": "Sub-questions: \n1.", "response": "{\"1\": {\"evaluated_level\": 1, \"credit\": 100}}", "tokens": 4, "repeat": 0}]}"#,
    )
    .unwrap();
    std::fs::write(
        p.join("exp.toml"),
        r#"
method = "plan_and_budget"
dataset_path = "d.jsonl"
evaluator = "exact_match"
n_runs = 2
[planner]
backend = "mock"
model = "planner"
script = "script.json"
[reasoner]
backend = "mock"
model = "reasoner"
rules = [{ response = "<think>4?</think>\\boxed{4}", tokens = 20, repeat = 0 }]
"#,
    )
    .unwrap();
    let out = planbudget(&["run", "--config", "exp.toml", "--out", "out", "--frozen-clock"], p);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(csv.contains("plan_and_budget,reasoner,d,100.0,0.0,30.0,0.0"), "{csv}");

    let again = planbudget(&["report", "out/trace.jsonl"], p);
    assert_eq!(String::from_utf8_lossy(&again.stdout), csv);
    let json = stdout_json(&planbudget(&["report", "out/trace.jsonl", "--format", "json"], p));
    assert_eq!(json[0]["n_runs"], 2);

    let plan = stdout_json(&planbudget(&["plan", "--config", "exp.toml", "--question", "What is 2+2?", "--level", "1"], p));
    assert_eq!(plan["plan"]["subquestions"][0]["text"], "Add.");
    assert_eq!(plan["plan"]["credits"], serde_json::json!([100]));
    assert_eq!(plan["completion_tokens"], 10);
}
