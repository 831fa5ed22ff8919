use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn aas(args: &[&str]) -> (i32, Vec<Value>, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_aas-sim"))
        .args(args)
        .output()
        .expect("binary runs");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let records = stdout
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect();
    (out.status.code().unwrap(), records, String::from_utf8(out.stderr).unwrap())
}

fn write_temp(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn records<'a>(all: &'a [Value], kind: &str) -> Vec<&'a Value> {
    all.iter().filter(|v| v["record"] == kind).collect()
}

#[test]
fn validate_intro_reports_family_sizes() {
    let (code, recs, _) = aas(&["validate", "--scenario", scenario("intro.toml").to_str().unwrap()]);
    assert_eq!(code, 0);
    let v = records(&recs, "validate")[0];
    assert_eq!(v["steps"][0]["authorized"], 2);
    assert_eq!(v["steps"][1]["authorized"], 5);
    assert_eq!(v["steps"][1]["unauthorized"], 11);
}

#[test]
fn validate_rejects_stalled_timeline_and_bad_syntax() {
    let dir = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(scenario("intro.toml")).unwrap();
    let stalled = write_temp(&dir, "s.toml", &base.replace("[[2, 3]]", "[[1, 2, 3, 4]]"));
    let (code, _, err) = aas(&["validate", "--scenario", stalled.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("step 2: no group is newly authorized"), "{err}");

    let broken = write_temp(&dir, "b.toml", &base.replace("L = 4", "L = \"four\""));
    let (code, _, err) = aas(&["validate", "--scenario", broken.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert!(err.contains("line"), "{err}");

    let (code, _, _) = aas(&["validate", "--scenario", "/nonexistent/x.toml"]);
    assert_eq!(code, 3);
    let (code, _, _) = aas(&["frobnicate"]);
    assert_eq!(code, 3);
}

#[test]
fn plan_reports_capacity_and_zero_rate() {
    let (code, recs, _) = aas(&["plan", "--scenario", scenario("taas_keys.toml").to_str().unwrap()]);
    assert_eq!(code, 0);
    for p in records(&recs, "plan") {
        for key in ["achievable", "converse", "capacity_if_threshold"] {
            assert!((p[key].as_f64().unwrap() - 2.0).abs() < 1e-9);
        }
    }

    let (_, recs, _) = aas(&["plan", "--scenario", scenario("intro.toml").to_str().unwrap()]);
    let t1 = records(&recs, "plan")[0];
    assert!(t1["achievable"].as_f64().unwrap().abs() < 1e-12);
    assert!(t1["warnings"].as_array().unwrap().contains(&Value::from("zero_rate")));

    let (_, recs, _) = aas(&["plan", "--scenario", scenario("deterministic.toml").to_str().unwrap()]);
    let p = records(&recs, "plan")[0];
    for key in ["achievable", "converse", "R_t", "max_authorized_entropy", "min_unauthorized_entropy"] {
        assert_eq!(p[key].as_f64().unwrap(), 0.0, "{key}");
    }
}

#[test]
fn simulate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (code, recs, _) = aas(&[
        "simulate",
        "--scenario",
        scenario("deterministic.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    for r in records(&recs, "reliability") {
        assert_eq!(r["failures"], 0);
    }
    for name in ["transcript_n4.json", "transcript_n8.json", "reliability.csv", "scenario.normalized.toml"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let doc: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("transcript_n4.json")).unwrap()).unwrap();
    assert!(doc["steps"][0].get("s_t").is_none());
    assert_eq!(doc["steps"][0]["s_t_commitment"].as_str().unwrap().len(), 64);
}

#[test]
fn reveal_secrets_writes_them() {
    let dir = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(scenario("single_key.toml")).unwrap();
    let p = write_temp(&dir, "r.toml", &base.replace("trials = 100", "trials = 3\nreveal_secrets = true"));
    let (code, recs, _) = aas(&["simulate", "--scenario", p.to_str().unwrap()]);
    assert_eq!(code, 0);
    let t = records(&recs, "transcript")[0];
    assert_eq!(t["transcript"]["steps"][0]["s_t"].as_array().unwrap().len(), 1);
}

#[test]
fn budget_failures_exit_2() {
    let sc = scenario("negative_control.toml");
    let (code, _, err) = aas(&["simulate", "--scenario", sc.to_str().unwrap(), "--budget", "2"]);
    assert_eq!(code, 2);
    assert!(err.contains("BudgetExceeded"), "{err}");
    let (code, _, err) = aas(&["audit", "--scenario", scenario("secrecy_keys.toml").to_str().unwrap(), "--budget", "2"]);
    // The Monte-Carlo fallback keeps the audit within budget.
    assert_eq!(code, 0, "{err}");
}

#[test]
fn audit_flags_the_worst_row() {
    let dir = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(scenario("secrecy_keys.toml")).unwrap();
    let p = write_temp(&dir, "a.toml", &base.replace("witnesses = [[1]]", "witnesses = []"));
    let (code, recs, _) = aas(&["audit", "--scenario", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    let rows = records(&recs, "secrecy");
    // 𝕌 = {∅, {1}, {2}} at each of three block lengths.
    assert_eq!(rows.len(), 9);
    for n in [2, 4, 6] {
        let at_n: Vec<_> = rows.iter().filter(|r| r["n"] == n).collect();
        let worst: Vec<_> = at_n.iter().filter(|r| r["worst"] == true).collect();
        assert_eq!(worst.len(), 1);
        let max = at_n.iter().map(|r| r["tv_to_uniform_product"].as_f64().unwrap()).fold(0.0, f64::max);
        assert_eq!(worst[0]["tv_to_uniform_product"].as_f64().unwrap(), max);
    }
    assert!(dir.path().join("secrecy.csv").exists());
}

#[test]
fn dump_normalized_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let dump = |path: &Path| {
        let out = Command::new(env!("CARGO_BIN_EXE_aas-sim"))
            .args(["validate", "--dump-normalized", "--scenario", path.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap()
    };
    for name in ["intro.toml", "negative_control.toml", "deterministic.toml", "secrecy_keys.toml"] {
        let first = dump(&scenario(name));
        let p = write_temp(&dir, name, &first);
        assert_eq!(dump(&p), first, "{name}");
        let a = aas_sim::scenario::Scenario::from_toml(&first).unwrap();
        let b = aas_sim::scenario::Scenario::from_toml(&std::fs::read_to_string(scenario(name)).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn help_exits_zero() {
    let (code, _, _) = aas(&["--help"]);
    assert_eq!(code, 0);
}
