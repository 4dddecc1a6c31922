//! Exit codes, error records and run-directory contents of the binary's
//! entry point.

use std::path::Path;

use bcflong_cli::{run_command, RunConfig};

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("bcflong").chain(args.iter().copied()))
}

fn error_record(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("error.json")).expect("error.json written");
    serde_json::from_str(&text).unwrap()
}

#[test]
fn simulate_succeeds_and_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = out.to_str().unwrap();
    let code = run(&["simulate", "--preset", "semi-synthetic", "--set", "n_rows=60", "--seed", "1", "--out", o]);
    assert_eq!(code, 0);
    for f in ["data.csv", "truth.csv", "run.conf", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], "1");
    let listed: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f[0].as_str().unwrap()).collect();
    assert!(listed.contains(&"data.csv") && !listed.contains(&"manifest.json"));
}

#[test]
fn run_conf_reproduces_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["simulate", "--preset", "semi-synthetic", "--set", "n_rows=40", "--out", o]), 0);
    let file = RunConfig::read_file(&out.join("run.conf")).unwrap();
    let again = RunConfig::resolve(&file, &[]).unwrap();
    assert_eq!(again.to_text(), std::fs::read_to_string(out.join("run.conf")).unwrap());
}

#[test]
fn unknown_key_is_a_config_error() {
    assert_eq!(run(&["simulate", "--set", "no_such_key=1"]), 2);
    assert_eq!(run(&["simulate", "--set", "missing-equals"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
}

#[test]
fn missing_column_exits_2_with_record() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bad.csv");
    std::fs::write(&data, "subject,time,y\n1,0,1.0\n1,1,2.0\n").unwrap();
    let out = tmp.path().join("fit");
    let code = run(&["fit", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
    let e = error_record(&out);
    assert_eq!(e["exit_code"], 2);
    assert_eq!(e["kind"], "config");
    assert!(e["message"].as_str().unwrap().contains('z'));
}

#[test]
fn runtime_failure_exits_1_with_record() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bad.csv");
    // Treatment must be coded ±0.5.
    std::fs::write(&data, "subject,time,y,z,K1,W1\n1,0,1.0,3,0.1,0.2\n1,1,2.0,3,0.3,0.2\n").unwrap();
    let out = tmp.path().join("fit");
    let code = run(&["fit", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 1);
    let e = error_record(&out);
    assert_eq!(e["exit_code"], 1);
    assert_eq!(e["kind"], "runtime");
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn help_exits_0() {
    assert_eq!(run(&["--help"]), 0);
}
