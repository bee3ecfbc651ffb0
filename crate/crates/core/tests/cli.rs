use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dense"))
        .args(args)
        .env_remove("DENSE_SEED")
        .env_remove("DENSE_DATA_DIR")
        .output()
        .unwrap()
}

fn write_kg(dir: &Path) -> PathBuf {
    let kg = dir.join("kg");
    fs::create_dir_all(&kg).unwrap();
    let mut train = String::new();
    for i in 0..12 {
        train.push_str(&format!("e{i}\tlikes\te{}\n", (i + 1) % 12));
        train.push_str(&format!("e{}\tliked_by\te{i}\n", (i + 1) % 12));
        train.push_str(&format!("e{i}\tnear\te{}\n", (i + 2) % 12));
    }
    fs::write(kg.join("train.txt"), train).unwrap();
    fs::write(kg.join("valid.txt"), "e0\tlikes\te1\n").unwrap();
    fs::write(kg.join("test.txt"), "e3\tnear\te5\ne4\tlikes\te5\n").unwrap();
    kg
}

fn train_small(kg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--dataset",
        kg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--k",
        "2",
        "--batch",
        "8",
        "--neg",
        "4",
        "--workers",
        "1",
    ];
    args.extend_from_slice(extra);
    dense(&args)
}

fn config_value(out: &Path, key: &str) -> String {
    let text = fs::read_to_string(out.join("effective_config.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing from\n{text}"))
        .to_owned()
}

#[test]
fn exit_codes() {
    assert_eq!(dense(&["--help"]).status.code(), Some(0));
    assert_eq!(dense(&["train", "--bogus"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = dir.path().join("o");
    let o = dense(&[
        "stats",
        "--train",
        missing.to_str().unwrap(),
        "--valid",
        "x",
        "--test",
        "y",
    ]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let kg = write_kg(dir.path());
    let o = train_small(&kg, &out, &["--gamma", "-1", "--max-steps", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn zero_steps_writes_initial_checkpoint_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let kg = write_kg(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# run\nseed = 5\nk = 9\ngamma = 4.5\n").unwrap();
    let out = dir.path().join("run");
    let o = train_small(
        &kg,
        &out,
        &["--config", cfg.to_str().unwrap(), "--max-steps", "0"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "checkpoint_best.bin",
        "checkpoint_final.bin",
        "train_log.jsonl",
        "effective_config.txt",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(config_value(&out, "k"), "2");
    assert_eq!(config_value(&out, "seed"), "5");
    assert_eq!(config_value(&out, "gamma"), "4.5");
    assert_eq!(config_value(&out, "max_steps"), "0");
    assert_eq!(
        fs::read(out.join("checkpoint_best.bin")).unwrap(),
        fs::read(out.join("checkpoint_final.bin")).unwrap()
    );
}

#[test]
fn seed_environment_variable_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let kg = write_kg(dir.path());
    let out = dir.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_dense"))
        .args([
            "train",
            "--dataset",
            kg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .args(["--k", "2", "--max-steps", "0", "--workers", "1"])
        .env("DENSE_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(config_value(&out, "seed"), "77");

    let o = Command::new(env!("CARGO_BIN_EXE_dense"))
        .args([
            "train",
            "--dataset",
            kg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .args(["--k", "2", "--max-steps", "0", "--seed", "3"])
        .env("DENSE_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(config_value(&out, "seed"), "3");
}

#[test]
fn eval_and_analyze_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let kg = write_kg(dir.path());
    let run = dir.path().join("run");
    let o = train_small(&kg, &run, &["--max-steps", "40"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run.join("valid_metrics.json").is_file());
    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert!(log
        .lines()
        .all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    let ckpt = run.join("checkpoint_final.bin");
    let kg_s = kg.to_str().unwrap();

    let ev = dir.path().join("eval");
    let o = dense(&[
        "eval",
        "--dataset",
        kg_s,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        ev.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["count"], 4);
    let csv = fs::read_to_string(ev.join("per_relation.csv")).unwrap();
    assert!(csv.starts_with("relation_name,test_fraction,mrr\n"));
    assert!(csv.contains("likes,0.5,") && csv.contains("near,0.5,"));

    let an = dir.path().join("analysis");
    let o = dense(&[
        "analyze",
        "--dataset",
        kg_s,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        an.to_str().unwrap(),
        "--bins",
        "5",
        "--geometry",
        "likes",
        "--symmetry",
        "near",
        "--inverse",
        "likes",
        "liked_by",
        "--composition",
        "likes",
        "likes",
        "near",
        "--variant",
        "double-angle",
        "--triangles",
        "likes",
        "likes",
        "near",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(an.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert!(!files.is_empty());
    for f in files {
        let path = an.join(f["file"].as_str().unwrap());
        assert!(path.is_file(), "{}", path.display());
    }
    let hist = files.iter().find(|f| f["bins"] == 5).unwrap();
    let text = fs::read_to_string(an.join(hist["file"].as_str().unwrap())).unwrap();
    assert!(text.starts_with("bin_left,bin_right,frequency\n"));
    assert_eq!(text.lines().count(), 6);
    let counts = fs::read_to_string(an.join("triangle_counts.csv")).unwrap();
    assert!(counts.lines().nth(1).unwrap().ends_with(",12"), "{counts}");
}

#[test]
fn unknown_relation_and_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let kg = write_kg(dir.path());
    let run = dir.path().join("run");
    assert!(train_small(&kg, &run, &["--max-steps", "0"])
        .status
        .success());
    let ckpt = run.join("checkpoint_final.bin");
    let out = dir.path().join("a");
    let o = dense(&[
        "analyze",
        "--dataset",
        kg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--symmetry",
        "hugs",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("hugs")
            && err.contains("likes")
            && err.contains("liked_by")
            && err.contains("near"),
        "{err}"
    );

    let small = dir.path().join("small");
    fs::create_dir_all(&small).unwrap();
    fs::write(small.join("train.txt"), "a\tr\tb\n").unwrap();
    fs::write(small.join("valid.txt"), "").unwrap();
    fs::write(small.join("test.txt"), "b\tr\ta\n").unwrap();
    let o = dense(&[
        "eval",
        "--dataset",
        small.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
