use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn aeria(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aeria")).args(args).env_remove("AERIA_SEED").output().expect("spawn aeria")
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("market.json");
    std::fs::write(&p, r#"{"slots": 6, "bidders": {"kind": "fixed", "count": 15}, "seed": 3}"#).unwrap();
    p
}

#[test]
fn simulate_is_deterministic_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for format in ["json", "csv"] {
        let outs: Vec<Vec<u8>> = (0..2)
            .map(|k| {
                let out = dir.path().join(format!("r{k}.{format}"));
                let st = aeria(&[
                    "simulate",
                    "--config",
                    cfg.to_str().unwrap(),
                    "--format",
                    format,
                    "--out",
                    out.to_str().unwrap(),
                ]);
                assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
                std::fs::read(out).unwrap()
            })
            .collect();
        assert_eq!(outs[0], outs[1], "{format} output differs between runs");
    }
}

#[test]
fn seed_flag_and_env_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let by_flag = aeria(&["simulate", "--config", cfg, "--seed", "11", "--mechanism", "aeria"]);
    let by_env = Command::new(env!("CARGO_BIN_EXE_aeria"))
        .args(["simulate", "--config", cfg, "--mechanism", "aeria"])
        .env("AERIA_SEED", "11")
        .output()
        .unwrap();
    let other = aeria(&["simulate", "--config", cfg, "--seed", "12", "--mechanism", "aeria"]);
    assert!(by_flag.status.success() && by_env.status.success());
    assert_eq!(by_flag.stdout, by_env.stdout);
    assert_ne!(by_flag.stdout, other.stdout);
}

#[test]
fn mechanism_filter_limits_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = aeria(&["simulate", "--config", cfg.to_str().unwrap(), "--mechanism", "iao", "--mechanism", "amr2"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<_> = v["mechanisms"].as_array().unwrap().iter().map(|m| m["mechanism"].as_str().unwrap()).collect();
    assert_eq!(names, ["iao", "amr2"]);
}

#[test]
fn csv_report_has_one_row_per_slot_and_mechanism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = aeria(&["simulate", "--config", cfg.to_str().unwrap(), "--format", "csv"]);
    assert!(out.status.success());
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    let headers = r.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "revenue"));
    assert_eq!(r.records().count(), 6 * 5);
}

#[test]
fn auction_matches_golden_output() {
    let demands = data("three_users.json");
    let out = aeria(&["auction", "--demands", demands.to_str().unwrap(), "--seed", "42", "--format", "csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let golden = std::fs::read_to_string(data("three_users_seed42.csv")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden);
}

#[test]
fn auction_json_respects_target_bounds() {
    let demands = data("three_users.json");
    let out = aeria(&["auction", "--demands", demands.to_str().unwrap(), "--seed", "9"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let upper = v["roso"]["upper_revenue"].as_f64().unwrap();
    assert!((upper - 18.9).abs() < 1e-12);
    let c = &v["centre"];
    let (target, dl, y) = (c["target"].as_f64().unwrap(), c["delta"].as_f64().unwrap(), c["y"].as_f64().unwrap());
    assert!((dl - 1.8).abs() < 1e-12);
    assert!(target <= upper / dl && target > upper / y);
    let outcome = &v["outcome"];
    let paid: f64 = outcome["allocations"].as_array().unwrap().iter().map(|a| a["payment"].as_f64().unwrap()).sum();
    assert!((paid - outcome["revenue"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn verify_passes_on_small_run() {
    let out = aeria(&["verify", "--instances", "50", "--draws", "20000", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["checks"].as_array().unwrap().len() >= 8);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(aeria(&["simulate", "--mechanism", "vcg"]).status.code(), Some(1));
    assert_eq!(aeria(&["no-such-command"]).status.code(), Some(1));
    let demands = data("three_users.json");
    let out = aeria(&["auction", "--demands", demands.to_str().unwrap(), "--mechanism", "edgent"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(aeria(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"slots": 4, "edge_capacity": -1}"#).unwrap();
    let out = aeria(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("edge_capacity"));

    std::fs::write(&bad, r#"{"slots": 4, "slot_hour": 1}"#).unwrap();
    let out = aeria(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("slot_hour"));

    let missing = dir.path().join("missing.json");
    assert_eq!(aeria(&["auction", "--demands", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn short_trace_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let gen = aeria(&["gen-traces", "--slots", "3", "--out", dir.path().to_str().unwrap()]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"slots": 5, "traces": {"electricity": "electricity.csv"}}"#).unwrap();
    let out = aeria(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&cfg, r#"{"slots": 3, "traces": {"electricity": "electricity.csv", "bidders": "bidders.csv", "rates": "rates.csv"}}"#)
        .unwrap();
    let out = aeria(&["simulate", "--config", cfg.to_str().unwrap(), "--mechanism", "aeria"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_profiles_matches_shipped_catalog() {
    let out = aeria(&["gen-profiles"]);
    assert!(out.status.success());
    let shipped = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("data/catalog.json")).unwrap();
    assert_eq!(out.stdout, shipped);
}
