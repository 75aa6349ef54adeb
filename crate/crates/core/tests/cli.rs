use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bagforge(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bagforge"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("BAGFORGE_LOG", "warn")
        .output()
        .unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let cfg = json!({
        "data": { "num_samples": 120, "num_domains": 3, "d": 8, "gene_dim": 5, "emb": 6,
                  "bag_size_range": [2, 6], "subtype_signal": 2.0, "domain_signal": 1.0 },
        "model": { "d": 8, "n_prompts": 2, "emb": 6, "hidden_att": 4 },
        "train": { "lr": 2e-3, "gene_lr": 5e-3, "max_epochs": 3, "gene_max_epochs": 3, "patience": 2 }
    });
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn manifest(out: &Path, command: &str) -> Value {
    serde_json::from_slice(&fs::read(out.join(format!("manifest-{command}.json"))).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bagforge(&["frobnicate"], dir.path()).status.code(), Some(64));
    assert_eq!(bagforge(&["train", "--stage", "three"], dir.path()).status.code(), Some(64));
    assert_eq!(bagforge(&["train", "--variant", "+visual"], dir.path()).status.code(), Some(64));
    let help = Command::new(env!("CARGO_BIN_EXE_bagforge")).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = bagforge(&["gen-data", "--config", &cfg, "--seed", "3"], out);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(a.join("dataset.bfds")).unwrap(), fs::read(b.join("dataset.bfds")).unwrap());
    let m = manifest(&a, "gen-data");
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["data"]["seed"], 3);

    let ds = a.join("dataset.bfds");
    let o = bagforge(&["split", "--config", &cfg, "--dataset", ds.to_str().unwrap()], &a);
    assert_eq!(o.status.code(), Some(0));
    let plan: Value = serde_json::from_slice(&fs::read(a.join("split.json")).unwrap()).unwrap();
    assert_eq!(plan["test_ids"].as_array().unwrap().len(), 18);
    assert_eq!(plan["folds"].as_array().unwrap().len(), 5);
}

#[test]
fn failures_write_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.bfds");
    let o = bagforge(&["split", "--dataset", missing.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let m = manifest(dir.path(), "split");
    assert_eq!(m["exit_code"], 2);
    assert!(m["error"].as_str().unwrap().len() > 0);

    let corrupt = dir.path().join("corrupt.bfds");
    fs::write(&corrupt, b"XXXX\x01\x00\x00\x00").unwrap();
    let o = bagforge(&["split", "--dataset", corrupt.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let cfg = tiny_config(dir.path());
    let o = bagforge(&["train", "--config", &cfg, "--fold", "9"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(manifest(dir.path(), "train")["exit_code"], 1);
}

#[test]
fn train_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path();
    let o = bagforge(&["train", "--config", &cfg, "--seed", "5", "--fold", "1"], out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("| full | one |"));
    for f in ["main_fold1.bfck", "gene_fold1.bfck", "history_fold1.csv", "metrics.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(out.join("history_fold1.csv")).unwrap();
    assert!(history.starts_with("epoch,lambda_p,L_S,L_y,L_d,L_TOT,val_rocauc,val_acc\n"));

    let ckpt = out.join("main_fold1.bfck");
    let o = bagforge(&["eval", "--config", &cfg, "--seed", "5", "--checkpoint", ckpt.to_str().unwrap(), "--fold", "1"], out);
    assert_eq!(o.status.code(), Some(0));
    let eval: Value = serde_json::from_slice(&fs::read(out.join("eval_metrics.json")).unwrap()).unwrap();
    let metrics: Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(eval["val"]["rocauc"], metrics["folds"][0]["val"]["rocauc"]);
    assert_eq!(eval["test"]["rocauc"], metrics["folds"][0]["test"]["rocauc"]);

    let o = bagforge(&["export-embeddings", "--config", &cfg, "--seed", "5", "--checkpoint", ckpt.to_str().unwrap()], out);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("embeddings.csv")).unwrap();
    assert_eq!(csv.lines().count(), 121);
    let summary: Value = serde_json::from_slice(&fs::read(out.join("embeddings_summary.json")).unwrap()).unwrap();
    let probe = summary["domain_probe_acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&probe));

    let gene = out.join("gene_fold1.bfck");
    let o = bagforge(&["eval", "--config", &cfg, "--checkpoint", gene.to_str().unwrap()], out);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_reports_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = bagforge(&["gradcheck", "--seeds", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), "PASS, max rel err < 1e-4");
}
