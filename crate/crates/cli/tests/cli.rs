use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hetnet::phy::{McsTable, RaScheme};
use hetnet::queueing::delays;
use hetnet::scenario::{Scenario, ScenarioConfig};
use hetnet::solvers::Bundle;
use hetnet::ua::best_sinr;
use sha2::{Digest, Sha256};

fn hetnet(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetnet"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("HETNET_OUT_DIR")
        .env_remove("HETNET_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn records(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

fn error_kind(o: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).expect("structured error on stderr");
    v["error"]["kind"].as_str().unwrap().to_string()
}

#[test]
fn optimize_sweep_k_emits_one_row_per_k() {
    let dir = tempfile::tempdir().unwrap();
    let o = hetnet(
        dir.path(),
        &["optimize", "--metric", "lambda-max", "--ra", "psd", "--sweep-k", "--realizations", "1"],
    );
    ok(&o);
    let rows = records(&dir.path().join("results.csv"));
    assert_eq!(rows.len(), 99);
    let ks: Vec<usize> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(ks, (1..100).collect::<Vec<_>>());
    assert!(rows.iter().all(|r| &r[0] == "psd" && &r[2] == "optimal" && &r[5] == "lambda_max"));
}

#[test]
fn evaluate_matches_direct_queueing_call() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hetnet(dir.path(), &["evaluate", "--rule", "best-sinr", "--lambda", "10"]));
    let rows = records(&dir.path().join("evaluate.csv"));
    let scalar = |k: &str| -> f64 { rows.iter().find(|r| &r[0] == k).unwrap()[2].parse().unwrap() };

    let s = Scenario::build(&ScenarioConfig::desk_scale()).unwrap();
    let b = Bundle::new(&s, RaScheme::ccd(), &McsTable::default()).unwrap();
    let a = best_sinr(&b.link).unwrap();
    let want = delays(&a, &b.table, 10.0, b.rho_bar).unwrap();
    assert_eq!(scalar("t_system"), want.t_system);
    assert_eq!(scalar("t_max"), want.t_max);
    let rho: Vec<f64> = rows.iter().filter(|r| &r[0] == "rho").map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(rho, want.rho);
    assert_eq!(rows.iter().filter(|r| &r[0] == "t_i").count(), s.n_locations());
}

#[test]
fn dumps_have_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hetnet(dir.path(), &["scenario", "dump"]));
    ok(&hetnet(dir.path(), &["phy", "dump", "--ra", "od", "--k", "40"]));
    ok(&hetnet(dir.path(), &["associate", "--rule", "scf", "--beta", "6.6"]));
    let header = |f: &str| {
        csv::Reader::from_path(dir.path().join(f))
            .unwrap()
            .headers()
            .unwrap()
            .iter()
            .collect::<Vec<_>>()
            .join(",")
    };
    assert_eq!(header("scenario.csv"), "loc_id,bs_id,distance_m,gain_db");
    assert_eq!(header("phy.csv"), "loc_id,vbs_id,band,sinr_db,rate_bps");
    assert_eq!(header("association.csv"), "loc_id,vbs_id");
    // 700 locations, 35 base stations, one OD queue each.
    assert_eq!(records(&dir.path().join("scenario.csv")).len(), 700 * 35);
    assert_eq!(records(&dir.path().join("phy.csv")).len(), 700 * 35);
    assert_eq!(records(&dir.path().join("association.csv")).len(), 700);
}

#[test]
fn manifest_lists_outputs_with_hashes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hetnet(dir.path(), &["associate", "--ra", "psd", "--k", "30", "--rule", "re"]));
    let text = fs::read_to_string(dir.path().join("associate.manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(m["command"], "associate");
    assert_eq!(m["seeds"], serde_json::json!([1]));
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    let out = &m["outputs"][0];
    assert_eq!(out["path"], "association.csv");
    let bytes = fs::read(dir.path().join("association.csv")).unwrap();
    assert_eq!(out["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    assert!(!text.contains("time"));
}

#[test]
fn config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = hetnet(dir.path(), &["config"]);
    ok(&first);
    let path = dir.path().join("cfg.json");
    fs::write(&path, &first.stdout).unwrap();
    let second = hetnet(dir.path(), &["--config", path.to_str().unwrap(), "config"]);
    ok(&second);
    assert_eq!(first.stdout, second.stdout);

    // Partial files fill the rest with defaults.
    fs::write(&path, r#"{"scenario": {"macro_count": 1, "traffic": {"kind": "hotspot"}}, "realizations": 3}"#).unwrap();
    let third = hetnet(dir.path(), &["--config", path.to_str().unwrap(), "config"]);
    ok(&third);
    let v: serde_json::Value = serde_json::from_slice(&third.stdout).unwrap();
    assert_eq!(v["scenario"]["macro_count"], 1);
    assert_eq!(v["scenario"]["traffic"]["weight_ratio"], 5.0);
    assert_eq!(v["scenario"]["locations_per_cell"], 100);
    assert_eq!(v["realizations"], 3);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(&path, r#"{"scenario": {"macro_cnt": 7}}"#).unwrap();
    let o = hetnet(dir.path(), &["--config", path.to_str().unwrap(), "config"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_kind(&o), "config");
    assert!(String::from_utf8_lossy(&o.stderr).contains("macro_cnt"));
}

#[test]
fn invalid_flags_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = hetnet(dir.path(), &["phy", "dump", "--ra", "od"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_kind(&o), "config");
    let o = hetnet(dir.path(), &["phy", "dump", "--ra", "psd", "--k", "100"]);
    assert_eq!(o.status.code(), Some(2));
    let o = hetnet(dir.path(), &["associate", "--rule", "scf"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unstable_rate_exits_with_infeasible_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = hetnet(dir.path(), &["evaluate", "--lambda", "1e6"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_kind(&o), "infeasible");
}

#[test]
fn optimize_reports_budget_and_infeasible_rates() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hetnet(dir.path(), &["optimize", "--realizations", "1"]));
    let row = records(&dir.path().join("results.csv")).remove(0);
    let value: f64 = row[6].parse().unwrap();
    let bound: f64 = row[7].strip_prefix("within_gap:").unwrap().parse().unwrap();
    assert!(bound > value);

    // Between the incumbent and the proven bound the search cannot decide.
    let mid = format!("{}", 0.5 * (value + bound));
    let o = hetnet(
        dir.path(),
        &["optimize", "--metric", "avg-delay", "--lambda", &mid, "--realizations", "1"],
    );
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(error_kind(&o), "budget");
    // Partial results are still written.
    assert_eq!(&records(&dir.path().join("results.csv"))[0][7], "error:budget");

    let above = format!("{}", 1.01 * bound);
    let o = hetnet(
        dir.path(),
        &["optimize", "--metric", "avg-delay", "--lambda", &above, "--realizations", "1"],
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_is_deterministic_and_writes_trace() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--lambda",
        "50",
        "--horizon",
        "20",
        "--replications",
        "3",
        "--trace",
    ];
    ok(&hetnet(a.path(), &args));
    ok(&hetnet(b.path(), &args));
    for f in ["sim_classes.csv", "sim_queues.csv", "sim_summary.csv", "trace.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let trace = records(&a.path().join("trace.csv"));
    assert!(!trace.is_empty());
    assert_eq!(records(&a.path().join("sim_classes.csv")).len(), 700);
}

#[test]
fn worker_count_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["sweep", "--ra", "od", "--k-step", "20", "--realizations", "1"];
    ok(&hetnet(a.path(), &[&["--workers", "1"][..], &args].concat()));
    ok(&hetnet(b.path(), &[&["--workers", "3"][..], &args].concat()));
    for f in ["results.csv", "best_k.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    // 4 values of K, 4 curves.
    assert_eq!(records(&a.path().join("results.csv")).len(), 16);
    assert_eq!(records(&a.path().join("best_k.csv")).len(), 4);
}
