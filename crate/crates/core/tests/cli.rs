use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dan_core::data::{write_qa_tsv, RankingSynth};

fn dan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dan")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, task: &str, model: &str) -> String {
    let path = dir.join(format!("{task}-{model}.json"));
    let json = format!(
        r#"{{"task": "{task}", "model": "{model}",
            "data": {{"kind": "synthetic", "train": 50, "dev": 20, "test": 20}},
            "arch": {{"emb_dim": 6, "proj_dim": 4, "filters": 5, "hidden": 4}},
            "game": {{"max_epochs": 2}}}}"#
    );
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn sweep_with_flags_overriding_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "classification", "nll_baseline");
    let out = dir.path().join("out");
    let o = dan(&["sweep", "--config", &config, "--k", "5,full", "--seeds", "2..5", "--jobs", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    let rows: Vec<&str> = runs.lines().skip(2).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("classification,nll_baseline,5,2,"));
    assert!(rows[5].starts_with("classification,nll_baseline,50,4,"));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("k=5:") && stdout.contains("k=50:"));
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "ranking", "dan");
    let out = dir.path().join("model");
    let o = dan(&["train", "--config", &config, "--k", "full", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let record: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(record["k"], 50);
    assert!(out.join("history.csv").exists() && out.join("run.json").exists());

    let data = dir.path().join("qa.tsv");
    write_qa_tsv(&data, &RankingSynth::new(10, 4, 100).generate(1).unwrap()).unwrap();
    let ckpt = out.join("checkpoint.bin");
    let report = dir.path().join("report.json");
    let args = ["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap()];
    let a = dan(&args);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = dan(&[&args[..], &["--out", report.to_str().unwrap()]].concat());
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(v["map"]["mean"].as_f64().is_some());
    assert_eq!(fs::read(&report).unwrap(), a.stdout.strip_suffix(b"\n").unwrap());
}

#[test]
fn configuration_problems_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let ranking = write_config(dir.path(), "ranking", "dan");
    let bad_json = dir.path().join("bad.json");
    fs::write(&bad_json, "{\"task\": \"ranking\", \"learning\": 1}").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["sweep", "--config", bad_json.to_str().unwrap()],
        vec!["sweep", "--config", "/definitely/not/here.json"],
        vec!["sweep", "--config", &ranking, "--model", "nll_baseline"],
        vec!["sweep", "--config", &ranking, "--task", "regression"],
        vec!["sweep", "--config", &ranking, "--k", "ten"],
        vec!["sweep", "--config", &ranking, "--model", "dan_unlab", "--k", "full"],
        vec!["train", "--config", &ranking, "--seeds", "x"],
        vec!["sweep", "--config", &ranking, "--jobs", "0"],
        vec!["sweep", "--unknown-flag"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = dan(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn runtime_failures_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("garbage.bin");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    let data = dir.path().join("qa.tsv");
    write_qa_tsv(&data, &RankingSynth::new(3, 4, 100).generate(1).unwrap()).unwrap();
    for ckpt in [garbage.to_str().unwrap(), "/no/such/checkpoint.bin"] {
        let o = dan(&["evaluate", "--checkpoint", ckpt, "--data", data.to_str().unwrap()]);
        assert_eq!(code(&o), 1, "{}", stderr(&o));
    }
}

#[test]
fn malformed_rows_are_reported_with_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.tsv");
    fs::write(&train, "q1\twhat\tthat\t1\nq1\twhat\tother\tmaybe\n").unwrap();
    let config = dir.path().join("c.json");
    let t = train.to_str().unwrap();
    fs::write(
        &config,
        format!(r#"{{"data": {{"kind": "files", "train": "{t}", "dev": "{t}", "test": "{t}"}}, "k": [1], "seeds": [0]}}"#),
    )
    .unwrap();
    let o = dan(&["sweep", "--config", config.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("train.tsv:2"), "{}", stderr(&o));
}
