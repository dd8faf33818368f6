use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nohgnn::synthetic::{to_edge_list, write_edge_list, PlantedPartition};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nohgnn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn nohgnn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn edge_file(dir: &Path, seed: u64) -> PathBuf {
    let pp = PlantedPartition {
        nodes: 30,
        slots: 4,
        p_in: 0.3,
        ..PlantedPartition::default()
    };
    let path = dir.join(format!("pp{seed}.txt"));
    let g = pp.generate(seed).unwrap();
    write_edge_list(&to_edge_list(&g), fs::File::create(&path).unwrap()).unwrap();
    path
}

fn ingest(dir: &Path, seed: u64) -> PathBuf {
    let edges = edge_file(dir, seed);
    let out = dir.join(format!("data{seed}"));
    let o = run(&[
        "ingest",
        "--edges",
        edges.to_str().unwrap(),
        "--slots",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("dataset.nohg")
}

fn train(dataset: &Path, out: &Path) -> Output {
    let o = run(&[
        "train",
        "--dataset",
        dataset.to_str().unwrap(),
        "--dim",
        "8",
        "--epochs",
        "12",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    o
}

fn field(line: &str, key: &str) -> String {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from {line}"))
        .to_string()
}

#[test]
fn help_lists_every_flag() {
    let text = stdout(&run(&["train", "--help"]));
    for flag in [
        "--config",
        "--edges",
        "--dataset",
        "--slots",
        "--k-hops",
        "--layers",
        "--dim",
        "--lr",
        "--beta",
        "--transform",
        "--seed",
        "--neg-ratio",
        "--epochs",
        "--patience",
        "--out",
    ] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    assert!(stdout(&run(&["eval", "--help"])).contains("--split"));
}

#[test]
fn ingest_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let edges = edge_file(dir.path(), 1);
    let lines = fs::read_to_string(&edges).unwrap().lines().count();
    let out = dir.path().join("d");
    let o = run(&[
        "ingest",
        "--edges",
        edges.to_str().unwrap(),
        "--slots",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), format!("nodes=30 edges={lines} slots=4"));
    assert!(out.join("dataset.nohg").exists());
}

#[test]
fn missing_edge_file_names_the_path() {
    let o = run(&[
        "ingest",
        "--edges",
        "/definitely/not/here.txt",
        "--slots",
        "3",
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/definitely/not/here.txt"));
}

#[test]
fn invalid_learning_rate_is_rejected_by_key() {
    let dir = tempfile::tempdir().unwrap();
    let data = ingest(dir.path(), 2);
    let o = run(&[
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--lr",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("`lr`"), "{}", stderr(&o));
    assert!(!dir.path().join("model.nohg").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "lr = 0.01\nmomentum = 0.9\n").unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("momentum"));
}

#[test]
fn config_file_drives_training() {
    let dir = tempfile::tempdir().unwrap();
    let edges = edge_file(dir.path(), 4);
    let out = dir.path().join("run");
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "edges = {}\nslots = 4\ndim = 4\nepochs = 3\ntransform = dct\nout = {}\n",
            edges.display(),
            out.display()
        ),
    )
    .unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("model.nohg").exists());
    assert!(out.join("dataset.nohg").exists());
    assert_eq!(
        fs::read_to_string(out.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}

#[test]
fn train_eval_replay_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = ingest(dir.path(), 5);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let line = stdout(&train(&data, &a));
    let line_b = stdout(&train(&data, &b));
    assert_eq!(line, line_b);
    assert_eq!(
        fs::read(a.join("model.nohg")).unwrap(),
        fs::read(b.join("model.nohg")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(a.join("metrics.jsonl")).unwrap(),
        fs::read_to_string(b.join("metrics.jsonl")).unwrap()
    );

    let ck = a.join("model.nohg");
    let eval = |split: &str| {
        let o = run(&[
            "eval",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--dataset",
            data.to_str().unwrap(),
            "--split",
            split,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        serde_json::from_str::<serde_json::Value>(&stdout(&o)).unwrap()
    };
    let test = eval("test");
    assert_eq!(
        format!("{:.4}", test["f1"].as_f64().unwrap()),
        field(&line, "test_f1")
    );
    assert_eq!(
        format!("{:.4}", test["accuracy"].as_f64().unwrap()),
        field(&line, "test_accuracy")
    );
    for key in ["tp", "fp", "tn", "fn", "loss"] {
        assert!(test.get(key).is_some(), "{key}");
    }

    let best: usize = field(&line, "best_epoch").parse().unwrap();
    let log = fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    let entry: serde_json::Value =
        serde_json::from_str(log.lines().nth(best - 1).unwrap()).unwrap();
    assert_eq!(entry["epoch"].as_u64().unwrap() as usize, best);
    let val = eval("val");
    assert_eq!(
        val["f1"].as_f64().unwrap(),
        entry["val_f1"].as_f64().unwrap()
    );
    assert_eq!(
        val["accuracy"].as_f64().unwrap(),
        entry["val_acc"].as_f64().unwrap()
    );
    eval("train");

    let other = ingest(dir.path(), 6);
    let o = run(&[
        "eval",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--dataset",
        other.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(
        stderr(&o).contains("checkpoint/dataset mismatch"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn gradcheck_passes_and_is_repeatable() {
    for transform in ["identity", "dct"] {
        let a = run(&["gradcheck", "--transform", transform]);
        assert!(a.status.success(), "{}", stdout(&a));
        let err: f64 = field(&stdout(&a), "max_rel_error").parse().unwrap();
        assert!(err <= 1e-4);
        assert_eq!(
            stdout(&a),
            stdout(&run(&["gradcheck", "--transform", transform]))
        );
    }
}

#[test]
fn gradcheck_fails_with_corrupted_backward() {
    let o = bin()
        .args(["gradcheck"])
        .env("NOHGNN_FAULT_INJECT", "sigmoid")
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err: f64 = field(&stdout(&o), "max_rel_error").parse().unwrap();
    assert!(err > 1e-4);
}
