//! End-to-end tests against the built binary: exit codes, output files,
//! and byte-level determinism of reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_defect-homog"))
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process not killed by signal")
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small_config() -> serde_json::Value {
    json!({
        "n": 1,
        "a": {"breakpoints": [0.0, 0.5], "cells": [[2.0], [1.0]]},
        "b": {"support": [-1.0, 1.0], "cells": [[0.5]]},
        "c": ["0"],
        "d": ["u1^3 - u1 + sin(2*pi*x)"],
        "r": 4.0,
        "epsilons": [0.25, 0.125, 0.0625, 0.03125],
        "mesh": {"n_target": 64},
        "seed": 7,
        "out_dir": "out"
    })
}

fn write_config(dir: &Path, doc: &serde_json::Value) -> PathBuf {
    let path = dir.join("case.json");
    fs::write(&path, serde_json::to_vec_pretty(doc).expect("serialize")).expect("write config");
    path
}

/// Sorted (name, bytes) pairs of every file in a directory.
fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .expect("read out dir")
        .map(|e| {
            let e = e.expect("dir entry");
            let name = e.file_name().into_string().expect("utf8 name");
            (name, fs::read(e.path()).expect("read file"))
        })
        .collect();
    out.sort();
    out
}

#[test]
fn check_succeeds_on_the_shipped_config() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let out = bin()
        .args(["check", "--config"])
        .arg(shipped("cubic.json"))
        .arg("--out-dir")
        .arg(tmp.path())
        .output()
        .expect("run binary");
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));
    let report = fs::read_to_string(tmp.path().join("check.json")).expect("check.json");
    let doc: serde_json::Value = serde_json::from_str(&report).expect("valid json");
    assert_eq!(doc["command"], "check");
    assert_eq!(doc["payload"]["membership"]["member"], true);
    assert!(doc["config_sha256"].as_str().expect("sha").len() == 64);
}

#[test]
fn solve_writes_solution_and_report() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let config = write_config(tmp.path(), &small_config());
    let out_dir = tmp.path().join("out");
    let dump = out_dir.join("dump/fprime.bin");
    let out = bin()
        .args(["solve", "--epsilon", "0.03125", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(&out_dir)
        .arg("--dump-matrix")
        .arg(&dump)
        .output()
        .expect("run binary");
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));
    let bytes = fs::read(&dump).expect("matrix dump exists even in a fresh directory");
    let block = u64::from_le_bytes(bytes[0..8].try_into().expect("header"));
    let dim = u64::from_le_bytes(bytes[8..16].try_into().expect("header"));
    assert_eq!(block, 1);
    assert_eq!(dim, 65, "one block per node of the 64-interval mesh");
    assert_eq!(bytes.len() as u64, 16 + dim * dim * 8);
    let csv = fs::read_to_string(out_dir.join("solution_eps3.125e-2.csv")).expect("solution csv");
    assert!(csv.lines().any(|l| l == "x,u1"), "header row present");
    let report = fs::read_to_string(out_dir.join("solve_eps3.125e-2.json")).expect("solve json");
    let doc: serde_json::Value = serde_json::from_str(&report).expect("valid json");
    let rep = &doc["payload"]["report"];
    assert_eq!(rep["converged"], true);
    let err = rep["error_vs_reference"].as_f64().expect("error");
    let bound = rep["error_bound"].as_f64().expect("bound");
    assert!(err <= bound, "error {err} above bound {bound}");
}

#[test]
fn malformed_expression_exits_with_config_error() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut doc = small_config();
    doc["d"] = json!(["sin(pi*x"]);
    let config = write_config(tmp.path(), &doc);
    let out = bin()
        .args(["homogenize", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(tmp.path())
        .output()
        .expect("run binary");
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("parse error"), "stderr: {}", stderr_text(&out));
}

#[test]
fn unknown_config_key_exits_with_config_error() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut doc = small_config();
    doc["bogus"] = json!(1);
    let config = write_config(tmp.path(), &doc);
    let out = bin()
        .args(["check", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(tmp.path())
        .output()
        .expect("run binary");
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("bogus"), "stderr: {}", stderr_text(&out));
}

#[test]
fn missing_config_flag_is_a_usage_error() {
    let out = bin().arg("homogenize").output().expect("run binary");
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn epsilon_outside_range_is_rejected() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let config = write_config(tmp.path(), &small_config());
    let out = bin()
        .args(["solve", "--epsilon", "1.5", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(tmp.path())
        .output()
        .expect("run binary");
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("outside (0, 1]"), "stderr: {}", stderr_text(&out));
}

#[test]
fn mesh_cap_exceeded_has_its_own_exit_code() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut doc = small_config();
    doc["mesh"] = json!({"n_target": 2048, "cap": 100});
    let config = write_config(tmp.path(), &doc);
    let out = bin()
        .args(["check", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(tmp.path())
        .output()
        .expect("run binary");
    assert_eq!(exit_code(&out), 4);
    assert!(stderr_text(&out).contains("cap"), "stderr: {}", stderr_text(&out));
}

#[test]
fn degenerate_instance_exits_with_numerical_failure() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let out = bin()
        .args(["check", "--config"])
        .arg(shipped("degenerate.json"))
        .arg("--out-dir")
        .arg(tmp.path())
        .output()
        .expect("run binary");
    assert_eq!(exit_code(&out), 3);
    assert!(stderr_text(&out).contains("degenerate"), "stderr: {}", stderr_text(&out));
}

#[test]
fn inadmissible_defect_names_the_offender() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut doc = small_config();
    doc["defects"] = json!([
        {"label": "mild", "b": {"support": [0.0, 1.0], "cells": [[0.25]]}},
        {"label": "huge", "b": {"support": [0.0, 1.0], "cells": [[9.0]]}}
    ]);
    let config = write_config(tmp.path(), &doc);
    let out = bin()
        .args(["sweep-defects", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(tmp.path())
        .output()
        .expect("run binary");
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("huge"), "stderr: {}", stderr_text(&out));
}

#[test]
fn fixed_seed_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let config = write_config(tmp.path(), &small_config());
    let run = |dir: &Path, threads: Option<&str>| {
        let mut cmd = bin();
        cmd.args(["rates", "--config"]).arg(&config).arg("--out-dir").arg(dir);
        match threads {
            Some(t) => cmd.env("DEFECT_HOMOG_THREADS", t),
            None => cmd.env_remove("DEFECT_HOMOG_THREADS"),
        };
        let out = cmd.output().expect("run binary");
        assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));
    };
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    let dir_c = tmp.path().join("c");
    run(&dir_a, None);
    run(&dir_b, None);
    run(&dir_c, Some("2"));
    let a = dir_contents(&dir_a);
    assert!(!a.is_empty(), "rates wrote no files");
    assert_eq!(a, dir_contents(&dir_b), "rerun differs");
    assert_eq!(a, dir_contents(&dir_c), "thread count changed the output");
}
