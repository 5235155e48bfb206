use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cipw::estimators::ipw;
use cipw::io::{dist_from_json, read_dataset_csv};
use cipw::model::Partition;
use cipw::moments::cipw_moments;
use serde_json::Value;

fn cipw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cipw")).args(args).env("CIPW_THREADS", "1").output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = cipw(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lem16(dir: &Path) -> PathBuf {
    let out = cipw(&["synth", "lem16"]);
    assert!(out.status.success());
    write(dir, "lem16.json", &String::from_utf8(out.stdout).unwrap())
}

#[test]
fn merged_lem16_bias_is_three_eighths() {
    let dir = tempfile::tempdir().unwrap();
    let dist = lem16(dir.path());
    let part = write(dir.path(), "merged.json", r#"{"sets": [[0, 1]], "null": []}"#);
    let v = ok_json(&["moments", "--dist", s(&dist), "--partition", s(&part), "--n", "100"]);
    assert_eq!(v["bias"].as_f64().unwrap(), 0.375);
    assert_eq!(v["n"], 100);
}

#[test]
fn synth_output_round_trips_through_moments() {
    let dir = tempfile::tempdir().unwrap();
    let out = cipw(&["synth", "thm91", "--eta", "0.05", "--eps", "0.02", "--grid", "6"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let path = write(dir.path(), "thm91.json", &text);
    let d = dist_from_json(&text).unwrap();
    let part = write(dir.path(), "single.json", &serde_json::to_string(&cipw::io::PartitionFile::from_partition(&Partition::singletons(d.m()))).unwrap());
    let v = ok_json(&["moments", "--dist", s(&path), "--partition", s(&part), "--n", "250"]);
    let lib = cipw_moments(&d, &Partition::singletons(d.m()), &d.scores(), 250).unwrap();
    assert_eq!(v["mse"].as_f64().unwrap(), lib.mse);
    assert_eq!(v["expectation"].as_f64().unwrap(), lib.expectation);
}

#[test]
fn planted_synth_is_enveloped_and_reloadable() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["synth", "planted", "--d", "2", "--k", "2", "--alpha", "0.1", "--beta", "0.2", "--rho", "0.3", "--lipschitz", "1", "--seed", "5"];
    let v = ok_json(&args);
    assert_eq!(v["seed"], 5);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(v, ok_json(&args));
    let path = write(dir.path(), "planted.json", &v.to_string());
    let part = write(dir.path(), "merged.json", &format!(r#"{{"sets": [[{}]]}}"#, (0..v["result"]["mass"].as_array().unwrap().len()).map(|i| i.to_string()).collect::<Vec<_>>().join(",")));
    ok_json(&["moments", "--dist", s(&path), "--partition", s(&part), "--n", "10"]);
}

#[test]
fn reduce_builds_k_plus_two_points() {
    let v = ok_json(&["reduce", "--a", "1,2,3", "--target", "3"]);
    assert_eq!(v["m"], 5);
    assert_eq!(v["points"].as_array().unwrap().len(), 5);
    assert!(v["eps"].as_str().unwrap().contains('/'));
    let c = ok_json(&["reduce", "--a", "1,2,3", "--target", "3", "--certificate", "2"]);
    assert_eq!(c["certificate"]["leq_u"], true);
}

#[test]
fn estimate_matches_library_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let dist = lem16(dir.path());
    let out = cipw(&["sample", "--dist", s(&dist), "--n", "300", "--seed", "17", "--eps", "0.05", "--mode", "random"]);
    assert!(out.status.success());
    let csv_text = String::from_utf8(out.stdout).unwrap();
    assert!(csv_text.starts_with("# seed=17 version="));
    assert!(csv_text.lines().nth(1).unwrap() == "x1,y,t,e_hat");
    let data_path = write(dir.path(), "data.csv", &csv_text);
    let v = ok_json(&["estimate", "--data", s(&data_path), "--method", "ipw"]);
    let f = read_dataset_csv(csv_text.as_bytes(), None).unwrap();
    let lib = ipw(&f.data, f.scores_hat.as_ref().unwrap()).unwrap();
    assert_eq!(v["estimate"].as_f64().unwrap().to_bits(), lib.to_bits());
    assert_eq!(v["n"], 300);

    let d = dist_from_json(&std::fs::read_to_string(&dist).unwrap()).unwrap();
    let g = read_dataset_csv(csv_text.as_bytes(), Some(&d.support())).unwrap();
    let w = ok_json(&["estimate", "--data", s(&data_path), "--dist", s(&dist), "--method", "neyman"]);
    assert_eq!(w["estimate"].as_f64().unwrap().to_bits(), cipw::estimators::neyman(&g.data).unwrap().to_bits());
}

#[test]
fn sample_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let dist = lem16(dir.path());
    let a = cipw(&["sample", "--dist", s(&dist), "--n", "50", "--seed", "3"]);
    let b = cipw(&["sample", "--dist", s(&dist), "--n", "50", "--seed", "3"]);
    assert_eq!(a.stdout, b.stdout);
    let out = dir.path().join("out.csv");
    let c = cipw(&["--out", s(&out), "sample", "--dist", s(&dist), "--n", "50", "--seed", "3"]);
    assert!(c.status.success());
    assert_eq!(std::fs::read(&out).unwrap(), a.stdout);
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let dist = lem16(dir.path());

    // missing seed: configuration
    let out = cipw(&["sample", "--dist", s(&dist), "--n", "5"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");

    // covariate outside the support: lookup
    let bad = write(dir.path(), "bad.csv", "x1,y,t\n0.5,0,1\n");
    let out = cipw(&["estimate", "--data", s(&bad), "--dist", s(&dist), "--method", "neyman"]);
    assert_eq!(out.status.code(), Some(3));

    // malformed distribution: data
    let junk = write(dir.path(), "junk.json", "{\"points\": 1}");
    let part = write(dir.path(), "p.json", r#"{"sets": [[0, 1]]}"#);
    let out = cipw(&["moments", "--dist", s(&junk), "--partition", s(&part), "--n", "5"]);
    assert_eq!(out.status.code(), Some(3));

    // everything trimmed: domain
    let data = write(dir.path(), "d.csv", "x1,y,t,e_hat\n0,1,1,0.01\n1,0,0,0.02\n");
    let out = cipw(&["estimate", "--data", s(&data), "--method", "trimmed", "--eta", "0.1"]);
    assert_eq!(out.status.code(), Some(4));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "domain");

    // oracle beyond the enumeration limit: size
    let big: Value = serde_json::json!({
        "points": (0..11).map(|i| vec![i as f64]).collect::<Vec<_>>(),
        "mass": vec![1.0 / 11.0; 11], "e": vec![0.5; 11], "mu0": vec![0.0; 11], "mu1": vec![0.0; 11],
        "v0": vec![0.0; 11], "v1": vec![0.0; 11]
    });
    let big = write(dir.path(), "big.json", &big.to_string());
    assert_eq!(cipw(&["oracle", "--dist", s(&big), "--n", "10"]).status.code(), Some(2));
}

#[test]
fn find_reports_a_fractional_partition() {
    let dir = tempfile::tempdir().unwrap();
    let out = cipw(&["synth", "thm91", "--eta", "0.05", "--eps", "0.02", "--grid", "10"]);
    let dist = write(dir.path(), "t.json", &String::from_utf8(out.stdout).unwrap());
    let out = cipw(&["sample", "--dist", s(&dist), "--n", "4000", "--seed", "8", "--with-scores"]);
    let data = write(dir.path(), "t.csv", &String::from_utf8(out.stdout).unwrap());
    let v = ok_json(&["find", "--data", s(&data), "--alpha", "0.05", "--beta", "0.2", "--eps", "0.02", "--seed", "9"]);
    assert_eq!(v["seed"], 9);
    assert!(v["result"]["tau"].as_f64().unwrap().is_finite());
    assert!(v["result"]["partition"]["weights"].is_array());
}

#[test]
fn compare_writes_csv_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = cipw(&["synth", "lem-c1", "--eps", "0.1"]);
    let dist = write(dir.path(), "c.json", &String::from_utf8(out.stdout).unwrap());
    let out = cipw(&["--format", "csv", "compare", "--dist", s(&dist), "--n", "50", "--reps", "100", "--eps", "0.02", "--estimators", "ipw,neyman", "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# seed=4 "));
    assert_eq!(lines.next().unwrap(), "estimator,mode,n,rmse,se");
    assert_eq!(lines.count(), 2 * 8);
}

#[test]
fn oracle_and_robust_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = cipw(&["synth", "lem-c1", "--eps", "0.01"]);
    let dist = write(dir.path(), "c.json", &String::from_utf8(out.stdout).unwrap());
    let v = ok_json(&["oracle", "--dist", s(&dist), "--n", "100"]);
    assert!(v["mse"].as_f64().unwrap() >= 0.0);
    let part = write(dir.path(), "s.json", r#"{"sets": [[0], [1]]}"#);
    let r = ok_json(&["robust", "--dist", s(&dist), "--partition", s(&part), "--n", "100", "--eps", "0.005"]);
    assert_eq!(r["worst_scores"].as_array().unwrap().len(), 2);
    let over = cipw(&["robust", "--dist", s(&dist), "--partition", s(&part), "--n", "100", "--eps", "0.05"]);
    assert_eq!(over.status.code(), Some(2));
}
