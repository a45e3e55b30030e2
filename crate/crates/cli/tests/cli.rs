use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crosschannel"))
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_metrics_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("m.json");
    let trace = dir.path().join("t.jsonl");
    let cfg = configs().join("ce.json");
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--metrics",
        metrics.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(m["invariants_held"], true);
    assert_eq!(m["onchain_tx_total"], 12);
    assert_eq!(m["receipts_processed"], m["receipts_expected"]);

    let lines = fs::read_to_string(&trace).unwrap();
    assert!(lines.lines().count() > 10);
    for l in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v.is_object());
    }
    assert_eq!(m["trace_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_flag_overrides_the_config() {
    let cfg = configs().join("eie.json");
    let digest = |seed: &str| {
        let o = run(&["run", "--config", cfg.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success());
        stdout(&o).lines().find(|l| l.starts_with("trace digest")).unwrap().to_string()
    };
    assert_eq!(digest("4"), digest("4"));
    assert_ne!(digest("4"), digest("5"));
}

#[test]
fn broken_atomicity_exits_nonzero() {
    let cfg = configs().join("no_assist.json");
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("Split"));
    let o = run(&["enumerate", "--config", cfg.to_str().unwrap(), "--bound", "12"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("split witness"));
}

#[test]
fn invalid_config_names_the_rule() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, r#"{"timers":{"t3":40,"t4":40}}"#).unwrap();
    let o = run(&["run", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("T3 > T4"));

    fs::write(&p, r#"{"vss":{"t":1,"n":3}}"#).unwrap();
    let o = run(&["run", "--config", p.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("t > ell"));

    let o = run(&["run", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_prints_a_linear_table() {
    let cfg = configs().join("sweep.json");
    let o = run(&["sweep", "--config", cfg.to_str().unwrap(), "--channels", "10:30:10"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().filter(|l| l.trim_end().ends_with("held")).collect();
    assert_eq!(rows.len(), 3);
    assert!(out.contains("R^2 1.000000"), "{out}");
    let again = run(&["sweep", "--config", cfg.to_str().unwrap(), "--channels", "10:30:10"]);
    assert_eq!(out, stdout(&again));
}

#[test]
fn enumerate_finds_only_clean_outcomes() {
    let cfg = configs().join("enumerate.json");
    let o = run(&["enumerate", "--config", cfg.to_str().unwrap(), "--bound", "12"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("invariant failures 0"));
}

#[test]
fn bad_arguments_are_rejected() {
    let cfg = configs().join("sweep.json");
    assert!(!run(&["sweep", "--config", cfg.to_str().unwrap(), "--channels", "9:1"]).status.success());
    assert!(!run(&["enumerate", "--config", cfg.to_str().unwrap(), "--bound", "0"]).status.success());
    assert!(!run(&["frobnicate"]).status.success());
}
