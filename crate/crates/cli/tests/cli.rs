//! End-to-end runs of the binary.

use std::path::Path;
use std::process::{Command, Output};

fn dtpc(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtpc"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn capacity_writes_certified_summary_and_support() {
    let dir = tempfile::tempdir().unwrap();
    let o = dtpc(
        dir.path(),
        &["capacity", "--lambda0", "1", "--pmax", "5", "--pavg", "5"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&dir.path().join("capacity.json"));
    assert!(v["result"]["kkt_max_violation"].as_f64().unwrap() <= 1e-4);
    assert_eq!(v["config"]["pavg"], 5.0);
    assert_eq!(v["config"]["solver"]["verify_points"], 10_000);
    assert!(v["result"].get("wallclock_ms").is_none());
    assert!(json(&dir.path().join("timing.json"))["wallclock_ms"].as_f64().unwrap() >= 0.0);
    let support = std::fs::read_to_string(dir.path().join("support.csv")).unwrap();
    assert_eq!(support.lines().next(), Some("x,mass"));
    assert_eq!(support.lines().count(), 3);
}

#[test]
fn vanishing_peak_gives_vanishing_capacity() {
    let dir = tempfile::tempdir().unwrap();
    let o = dtpc(dir.path(), &["capacity", "--lambda0", "1", "--pmax", "1e-6"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(
        json(&dir.path().join("capacity.json"))["result"]["capacity_bits"]
            .as_f64()
            .unwrap()
            <= 1e-4
    );
}

#[test]
fn missing_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dtpc(dir.path(), &["capacity", "--pmax", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda0"));
    let o = dtpc(
        dir.path(),
        &["capacity", "--lambda0", "1", "--pmax", "5", "--bogus", "1"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn non_degraded_pair_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = dtpc(
        dir.path(),
        &["sid", "--lambda-b", "1", "--lambda-e", "0.5", "--pmax", "5"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not degraded"));
}

#[test]
fn sid_reports_dichotomy() {
    let dir = tempfile::tempdir().unwrap();
    let o = dtpc(
        dir.path(),
        &["sid", "--lambda-b", "1", "--lambda-e", "1", "--pmax", "5"],
    );
    assert_eq!(o.status.code(), Some(0));
    let r = &json(&dir.path().join("sid.json"))["result"];
    assert_eq!(r["c_sid"], 0.0);
    assert!(r["c_main"].as_f64().unwrap() > 0.7);
}

#[test]
fn config_file_is_merged_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"root_seed": 9, "lambda0": 2, "pmax": 5, "tolerances": {"restarts": 2}}"#,
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = dtpc(&out, &["--config", cfg.to_str().unwrap(), "capacity", "--lambda0", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&out.join("capacity.json"));
    assert_eq!(v["root_seed"], 9);
    assert_eq!(v["config"]["lambda0"], 1.0);
    assert_eq!(v["config"]["solver"]["restarts"], 2);

    std::fs::write(&cfg, r#"{"lambda0": 1, "pmax": 5, "typo": 3}"#).unwrap();
    let o = dtpc(&out, &["--config", cfg.to_str().unwrap(), "capacity"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn converse_table_has_one_row_per_length() {
    let dir = tempfile::tempdir().unwrap();
    let o = dtpc(
        dir.path(),
        &[
            "converse",
            "--lambda0",
            "1",
            "--pmax",
            "5",
            "--n",
            "10,100,1000",
            "--nu",
            "0.1",
            "--samples",
            "20000",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("converse.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["n", "nu", "empirical_tail", "chebyshev_bound", "samples", "seed"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        let tail: f64 = r[2].parse().unwrap();
        let bound: f64 = r[3].parse().unwrap();
        assert!(tail <= bound);
    }
}

#[test]
fn idsim_reports_wilson_intervals_and_missed_targets() {
    let dir = tempfile::tempdir().unwrap();
    // collisions alone allow a second-kind rate of up to d/q = 2/11
    let o = dtpc(
        dir.path(),
        &[
            "idsim",
            "--lambda0",
            "1",
            "--pmax",
            "5",
            "--n",
            "16",
            "--q",
            "11",
            "--d",
            "2",
            "--trials",
            "300",
            "--link",
            "noiseless",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("targets missed"));
    let v = json(&dir.path().join("idsim.json"));
    assert_eq!(v["result"]["targets_met"], false);
    let r = &v["result"]["report"];
    assert_eq!(r["first_kind"]["successes"], 0);
    let sk = &r["second_kind"]["worst"];
    assert!(sk["lower"].as_f64().unwrap() <= sk["rate"].as_f64().unwrap());
    assert!(sk["upper"].as_f64().unwrap() >= sk["rate"].as_f64().unwrap());
    let trials = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    assert!(trials.starts_with("trial,true_msg,candidate,accepted,first_kind,second_kind"));
}

#[test]
fn oversize_inner_rate_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dtpc(
        dir.path(),
        &[
            "idsim",
            "--lambda0",
            "1",
            "--pmax",
            "5",
            "--n",
            "4",
            "--q",
            "257",
            "--d",
            "1",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn leakage_writes_audit() {
    let dir = tempfile::tempdir().unwrap();
    let o = dtpc(
        dir.path(),
        &[
            "leakage",
            "--lambda-b",
            "1",
            "--lambda-e",
            "10",
            "--pmax",
            "5",
            "--trials",
            "1000",
            "--events",
            "50",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = &json(&dir.path().join("leakage.json"))["result"];
    assert_eq!(r["below_chain_rule"], true);
    assert_eq!(r["audit"]["violations"], 0);
    let events = std::fs::read_to_string(dir.path().join("events.csv")).unwrap();
    assert_eq!(events.lines().count(), 51);
}

#[test]
fn sequential_and_threaded_runs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "converse",
        "--lambda0",
        "1",
        "--pmax",
        "5",
        "--n",
        "10,100",
        "--samples",
        "3000",
    ];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut seq = vec!["--threads", "1"];
    seq.extend(args);
    let mut par = vec!["--threads", "2"];
    par.extend(args);
    assert_eq!(dtpc(&a, &seq).status.code(), Some(0));
    assert_eq!(dtpc(&b, &par).status.code(), Some(0));
    assert_eq!(
        std::fs::read(a.join("converse.json")).unwrap(),
        std::fs::read(b.join("converse.json")).unwrap()
    );
}
