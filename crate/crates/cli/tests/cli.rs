//! CLI integration tests: exit codes, error formatting, and schema
//! validation of every subcommand's JSON output.

use std::path::PathBuf;
use std::process::Output;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run_cli(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_pathorder"))
        .current_dir(root())
        .args(args)
        .output()
        .unwrap()
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pathorder-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Loads a schema, inlining the shared meta schema for `$ref` targets.
fn schema(name: &str) -> jsonschema::Validator {
    let dir = root().join("schemas");
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json")).unwrap()).unwrap();
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap();
    inline_meta(&mut doc, &meta);
    jsonschema::validator_for(&doc).unwrap()
}

fn inline_meta(v: &mut serde_json::Value, meta: &serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            if map.get("$ref").and_then(|r| r.as_str()) == Some("meta.json") {
                let mut inlined = meta.clone();
                if let Some(obj) = inlined.as_object_mut() {
                    obj.remove("$schema");
                    obj.remove("$id");
                }
                *v = inlined;
                return;
            }
            for val in map.values_mut() {
                inline_meta(val, meta);
            }
        }
        serde_json::Value::Array(items) => {
            for item in items {
                inline_meta(item, meta);
            }
        }
        _ => {}
    }
}

fn assert_valid(name: &str, bytes: &[u8]) {
    let doc: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    let validator = schema(name);
    let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

#[test]
fn missing_file_is_a_single_line_json_error() {
    let out = run_cli(&["order-test", "fixtures/no_such_file.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stderr).unwrap();
    assert_eq!(text.lines().count(), 1);
    let err: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    assert!(err["error"].is_string() && err["kind"].is_string());
}

#[test]
fn unknown_scenario_key_exits_one() {
    let dir = scratch("badkey");
    let bad = dir.join("bad.toml");
    let text = std::fs::read_to_string(root().join("fixtures/smoke.toml"))
        .unwrap()
        .replace("[sim]", "[sim]\nnn = 1");
    std::fs::write(&bad, text).unwrap();
    let out = run_cli(&["order-test", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn w2_of_identical_measures_is_zero() {
    let dir = scratch("w2");
    let measure = serde_json::json!({
        "shape": [1, 3],
        "atoms": [
            {"dim": 1, "dt": 0.5, "r0": 1.0, "values": [[1.0, 2.0, 3.0]]},
            {"dim": 1, "dt": 0.5, "r0": 1.0, "values": [[0.0, -1.0, 0.5]]}
        ]
    });
    let path = dir.join("a.json");
    std::fs::write(&path, serde_json::to_string(&measure).unwrap()).unwrap();
    let p = path.to_str().unwrap();
    let out = run_cli(&["w2", p, p]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["w2"].as_f64().unwrap(), 0.0);
    assert_valid("w2.json", &out.stdout);

    let out = run_cli(&["dominance", p, p]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["holds"], serde_json::Value::Bool(true));
    assert_valid("dominance.json", &out.stdout);
}

#[test]
fn check_conditions_exit_codes() {
    let ok = run_cli(&["check-conditions", "fixtures/s_plus.toml"]);
    assert_eq!(ok.status.code(), Some(0));
    assert_valid("conditions.json", &ok.stdout);

    let bad = run_cli(&["check-conditions", "fixtures/s_minus.toml"]);
    assert_eq!(bad.status.code(), Some(2));
    let doc: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    let kinds: Vec<&str> = doc["report"]["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["kind"].as_str().unwrap())
        .collect();
    assert!(kinds.contains(&"sigma-structure"));
    assert_valid("conditions.json", &bad.stdout);
}

#[test]
fn scenario_reports_validate_against_schemas() {
    let sim = run_cli(&["simulate", "fixtures/smoke.toml"]);
    assert_eq!(sim.status.code(), Some(0));
    assert_valid("simulate.json", &sim.stdout);

    let ord = run_cli(&["order-test", "fixtures/smoke.toml"]);
    assert!(ord.status.code() == Some(0) || ord.status.code() == Some(2));
    assert_valid("order_test.json", &ord.stdout);

    let nec = run_cli(&["necessity-probe", "fixtures/smoke.toml"]);
    assert_eq!(nec.status.code(), Some(0), "{}", String::from_utf8_lossy(&nec.stderr));
    assert_valid("necessity.json", &nec.stdout);
}

#[test]
fn psi_table_formats() {
    let json = run_cli(&["psi-table", "2", "--count", "11"]);
    assert_eq!(json.status.code(), Some(0));
    assert_valid("psi_table.json", &json.stdout);

    let csv = run_cli(&["--format", "csv", "psi-table", "2", "--count", "11"]);
    assert_eq!(csv.status.code(), Some(0));
    let text = String::from_utf8(csv.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("s,psi,dpsi,d2psi"));
    assert_eq!(lines.count(), 11);

    let bad = run_cli(&["psi-table", "0"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn simulate_writes_traces() {
    let dir = scratch("traces");
    let out = run_cli(&[
        "simulate",
        "fixtures/smoke.toml",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    for name in ["simulate.json", "x.csv", "xbar.csv"] {
        assert!(dir.join(name).exists(), "{name} missing");
    }
    let csv = std::fs::read_to_string(dir.join("x.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("time,"), "{header}");
}

#[test]
fn model_hash_matches_documented_fixture() {
    let out = run_cli(&["check-conditions", "fixtures/s_plus.toml"]);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let calib: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(root().join("fixtures/s_plus_p95.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(doc["meta"]["model_hash_b"], calib["model_hash"]);
    assert_eq!(doc["meta"]["model_hash_bbar"], calib["model_hash"]);
}

#[test]
fn seed_flag_overrides_file() {
    let a = run_cli(&["order-test", "fixtures/smoke.toml", "--seed", "1"]);
    let b = run_cli(&["order-test", "fixtures/smoke.toml", "--seed", "2"]);
    let c = run_cli(&["order-test", "fixtures/smoke.toml", "--seed", "2"]);
    assert_ne!(a.stdout, b.stdout);
    assert_eq!(b.stdout, c.stdout);
}
