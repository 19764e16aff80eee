//! End-to-end CLI tests: exit codes, artifact layout, idempotent dataset
//! generation, and the train -> evaluate roundtrip.

use std::path::Path;
use std::process::{Command, Output};

fn kinn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinn"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_poisson_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "dataset": {
            "poisson": {
                "k": 2, "k_ood": 3, "r": -0.5, "grid": 12,
                "n_train": 8, "n_val": 4, "n_test_id": 4, "n_test_ood": 4, "seed": 9
            }
        },
        "model": {
            "in_ch": 1, "out_ch": 1, "width": 6,
            "blocks": [{
                "d": 6, "expansion": 1, "state_size": 2, "cascade_depth": 1,
                "conv_kernel": 3, "directions": 1, "use_mlp": false, "aggregation": "dense_sum"
            }]
        },
        "training": { "epochs": 2, "batch_size": 4, "lr": 0.001, "halve_every": 0, "seed": 9 }
    });
    let path = dir.join("exp.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn gen_data_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_poisson_config(dir.path());
    let out = dir.path().join("run");

    let first = kinn(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], dir.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(out.join("dataset/train/meta.json").exists());
    assert!(out.join("dataset/test_ood/u.bin").exists());

    let second = kinn(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], dir.path());
    assert!(second.status.success());
    let msg = String::from_utf8_lossy(&second.stdout);
    assert!(msg.contains("up-to-date, hashes match"), "got: {msg}");
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        serde_json::json!({
            "dataset": { "poisson": {
                "k": 2, "k_ood": 3, "r": -0.5, "grid": 12,
                "n_train": 8, "n_val": 4, "n_test_id": 4, "n_test_ood": 4, "seed": 9,
                "wrong_key": 1
            }}
        })
        .to_string(),
    )
    .unwrap();
    let out = kinn(&["gen-data", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("wrong_key"), "stderr should name the key: {msg}");
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = kinn(&["train"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_without_dataset_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_poisson_config(dir.path());
    let out_dir = dir.path().join("run");
    // gen-data into a different out dir, then train against an empty one
    let gen = kinn(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("elsewhere").to_str().unwrap()], dir.path());
    assert!(gen.status.success());
    let out = kinn(&["train", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_then_evaluate_reproduces_val_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_poisson_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let cfg_s = cfg.to_str().unwrap();

    assert!(kinn(&["gen-data", "--config", cfg_s, "--out", out_s], dir.path()).status.success());
    let train = kinn(&["train", "--config", cfg_s, "--out", out_s], dir.path());
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(out.join("metrics.csv").exists());
    assert!(out.join("checkpoint_best.kinn1").exists());
    assert!(out.join("run.json").exists());

    let eval = kinn(&["evaluate", "--config", cfg_s, "--out", out_s, "--split", "val"], dir.path());
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));

    // the eval json must match the best row of the training log to 1e-12
    let eval_json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("eval_val.json")).unwrap()).unwrap();
    let run_json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("run.json")).unwrap()).unwrap();
    let best_epoch = run_json["extra"]["best_epoch"].as_u64().unwrap();
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let best_row: Vec<&str> = csv
        .lines()
        .find(|l| l.starts_with(&format!("{best_epoch},val,")))
        .expect("best val row present")
        .split(',')
        .collect();
    let logged_nrmse: f64 = best_row[3].parse().unwrap();
    let eval_nrmse = eval_json["nrmse"].as_f64().unwrap();
    assert!(
        (logged_nrmse - eval_nrmse).abs() < 1e-12,
        "logged {logged_nrmse} vs evaluated {eval_nrmse}"
    );
}

#[test]
fn verify_quick_passes_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = kinn(
        &["verify", "--level", "quick", "--filter", "convex", "--out", dir.path().to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"), "{stdout}");
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(json["passed"], serde_json::Value::Bool(true));
}

#[test]
fn verify_unknown_filter_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = kinn(&["verify", "--filter", "nonexistent_check"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_emits_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_poisson_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let cfg_s = cfg.to_str().unwrap();
    assert!(kinn(&["gen-data", "--config", cfg_s, "--out", out_s], dir.path()).status.success());
    let ab = kinn(
        &["ablate", "--config", cfg_s, "--out", out_s, "--axis", "depth", "--values", "1,2"],
        dir.path(),
    );
    assert!(ab.status.success(), "{}", String::from_utf8_lossy(&ab.stderr));
    let csv = std::fs::read_to_string(out.join("ablation_depth.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("1-pass,"));
    assert!(csv.lines().nth(2).unwrap().starts_with("2-pass,"));
}

#[test]
fn rollout_emits_horizon_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "dataset": {
            "sequence": {
                "cells": [
                    { "c": 1.0, "g_leak": 0.8, "g_p": 0.2, "b_p": 1.0 },
                    { "c": 1.5, "g_leak": 1.0, "g_p": 0.5, "b_p": 1.2 }
                ],
                "dt": 0.25, "steps": 40, "n_train": 4, "n_test": 2, "seed": 3
            }
        },
        "forecaster": {
            "channels": 3, "width": 6, "state_size": 2, "cascade_depth": 1,
            "context_len": 6, "train_horizon": 1
        },
        "forecast_training": { "epochs": 1, "batch_size": 8, "lr": 0.001, "halve_every": 0, "seed": 3 }
    });
    let path = dir.path().join("seq.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let cfg_s = path.to_str().unwrap();

    assert!(kinn(&["gen-data", "--config", cfg_s, "--out", out_s], dir.path()).status.success());
    let roll = kinn(&["rollout", "--config", cfg_s, "--out", out_s, "--horizon", "12"], dir.path());
    assert!(roll.status.success(), "{}", String::from_utf8_lossy(&roll.stderr));
    let csv = std::fs::read_to_string(out.join("rollout.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13, "header + 12 per-step rows:\n{csv}");
}
