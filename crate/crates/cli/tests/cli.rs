use std::process::{Command, Output};

use serde_json::Value;

fn corridor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corridor"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const REFERENCE: &str = "\
r = 0.012
g = 0.015
sigma = 0.15
rho = 0.25
c1 = 2.0
c2 = 1.25
lambda.1 = 0.1
lambda.2 = 0.0
q.1.2 = 0.02
q.2.1 = 0.02
";

fn config_file(text: &str) -> tempfile::NamedTempFile {
    let f = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(f.path(), text).unwrap();
    f
}

#[test]
fn table_runs_with_no_flags() {
    let o = corridor(&["table1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("one regime") && out.contains("24.8539") && out.contains("60.3393"), "{out}");
}

#[test]
fn missing_key_exits_2_and_names_it() {
    let f = config_file(&REFERENCE.replace("c1 = 2.0\n", ""));
    let o = corridor(&["solve", "--config", f.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing key c1"), "{}", stderr(&o));
}

#[test]
fn moment_bound_violation_exits_2_with_the_number() {
    let f = config_file(&REFERENCE.replace("rho = 0.25", "rho = 0.20"));
    let o = corridor(&["solve", "--config", f.path().to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    let line = stderr(&o).lines().find(|l| l.starts_with('{')).unwrap().to_string();
    let err: Value = serde_json::from_str(&line).unwrap();
    assert_eq!(err["error"]["kind"], "validation");
    assert_eq!(err["error"]["exit_code"], 2);
    assert!(err["error"]["message"].as_str().unwrap().contains("0.2165"));
}

#[test]
fn config_file_and_defaults_agree() {
    let f = config_file(REFERENCE);
    let a = corridor(&["solve", "--format", "json"]);
    let b = corridor(&["solve", "--format", "json", "--config", f.path().to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let rec: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(rec["constraints"], "pass");
    assert!(rec["residual_norm"].as_f64().unwrap() < 1e-10);
    let (a1, a1_pct) = (rec["a"][0].as_f64().unwrap(), rec["a_pct"][0].as_f64().unwrap());
    assert!((100.0 * a1 - a1_pct).abs() < 1e-12);
}

#[test]
fn one_regime_solve_in_percent() {
    let o = corridor(&["solve1", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("regime,a,b"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert!((row[1] - 24.8539).abs() < 1e-4 && (row[2] - 60.3393).abs() < 1e-4);
}

#[test]
fn value_dump_and_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("v.csv");
    let out = dir.path().join("solve.json");
    let o = corridor(&[
        "solve",
        "--dump",
        dump.to_str().unwrap(),
        "--dump-points",
        "50",
        "--format",
        "json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&dump).unwrap();
    assert_eq!(text.lines().next(), Some("x,v1,v1_prime,v2,v2_prime"));
    assert_eq!(text.lines().count(), 51);
    let rec: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rec["a"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_csv_schema() {
    let o = corridor(&["sweep", "--param", "r-g", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("swept_value,a1,a2,b1,b2,w1,w2,status"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().all(|r| r.ends_with(",ok")));
    assert!(rows[0].starts_with("-5,"));
}

#[test]
fn sweep_range_override() {
    let o = corridor(&["sweep", "--param", "sigma", "--from", "0.1", "--to", "0.2", "--points", "3", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let rec: Value = serde_json::from_slice(&o.stdout).unwrap();
    let pts = rec["points"].as_array().unwrap();
    assert_eq!(pts.len(), 3);
    assert!((pts[1]["swept_value"].as_f64().unwrap() - 15.0).abs() < 1e-12);
    let o = corridor(&["sweep", "--param", "sigma", "--from", "0.2", "--to", "0.1", "--points", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fd_csv_dump_has_one_column_per_regime() {
    let o = corridor(&["fd", "--grid", "600", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("x,v1,v2"));
    assert_eq!(out.lines().count(), 601);
    let o = corridor(&["fd", "--grid", "600", "--control", "--format", "csv"]);
    assert_eq!(stdout(&o).lines().next(), Some("x,V1,V2,V1_x,V2_x"));
    let o = corridor(&["fd", "--grid", "100"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulation_traces_and_bad_regime() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let o = corridor(&[
        "simulate",
        "--paths",
        "200",
        "--dt",
        "0.02",
        "--trace",
        trace.to_str().unwrap(),
        "--trace-count",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().next(), Some("path,t,Y,X,dξ,dη"));
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("2,"));

    let o = corridor(&["game", "--paths", "100", "--dt", "0.02", "--regime", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = corridor(&["game", "--paths", "100", "--dt", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulation_json_is_reproducible() {
    let args = ["simulate", "--paths", "2000", "--dt", "0.02", "--format", "json"];
    let a = corridor(&args);
    let b = corridor(&[&args[..], &["--threads", "3"]].concat());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = corridor(&[&args[..], &["--seed", "7"]].concat());
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn skipped_constraint_check_still_reports() {
    let f = config_file(REFERENCE);
    let o = corridor(&[
        "solve",
        "--config",
        f.path().to_str().unwrap(),
        "--no-constraint-check",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rec: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rec["constraints"], "pass");
}
