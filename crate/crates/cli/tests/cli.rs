use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn occrel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occrel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = occrel(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = "dims = [10, 10, 4]\ntrain_scenes = 1\nval_scenes = 1\ntest_scenes = 1\n";

/// gen-scenes then train (2 epochs) into `root`.
fn pipeline(root: &Path, mode: &str) {
    let cfg = root.join("scene.toml");
    fs::write(&cfg, TINY).unwrap();
    let data = root.join("data");
    ok(&["gen-scenes", "--config", s(&cfg), "--seed", "3", "--out", s(&data)]);
    ok(&[
        "train",
        "--data",
        s(&data),
        "--mode",
        mode,
        "--epochs",
        "2",
        "--seed",
        "3",
        "--out-model",
        s(&root.join("model.json")),
        "--out-dump",
        s(&root.join("dumps")),
    ]);
}

#[test]
fn full_pipeline_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    pipeline(root, "reliocc");
    for f in ["data/train.occd", "data/val.occd", "data/test.occd", "model.json", "dumps/test.occd", "dumps/loss.csv"] {
        assert!(root.join(f).exists(), "{f}");
    }
    let test = root.join("dumps/test.occd");
    let eval_dir = root.join("eval");
    let out = ok(&["eval", "--dump", s(&test), "--uncertainty", "sigma", "--out-dir", s(&eval_dir)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ece_sem"));
    assert!(eval_dir.join("metrics.csv").exists());

    let rep = root.join("report");
    ok(&["report", "--dump", s(&test), "--out-dir", s(&rep)]);
    for f in [
        "metrics.csv",
        "reliability_sem.csv",
        "reliability_sem.svg",
        "reliability_geo.csv",
        "reliability_geo.svg",
        "rejection_sem.csv",
        "rejection_sem.svg",
        "rejection_geo.csv",
        "rejection_geo.svg",
    ] {
        assert!(rep.join(f).exists(), "{f}");
    }
    let loss = fs::read_to_string(root.join("dumps/loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,L_occ,L_au,L_ru,total\n"));
    assert_eq!(loss.lines().count(), 3);
}

fn metric<'a>(csv: &'a str, name: &str) -> &'a str {
    csv.lines().find(|l| l.starts_with(&format!("{name},"))).unwrap()
}

#[test]
fn temperature_scaling_keeps_miou_line() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    pipeline(root, "baseline");
    let val = root.join("dumps/val.occd");
    let test = root.join("dumps/test.occd");
    ok(&["report", "--dump", s(&test), "--out-dir", s(&root.join("raw"))]);
    ok(&[
        "calibrate",
        "--kind",
        "temps",
        "--fit-dump",
        s(&val),
        "--apply-dump",
        s(&test),
        "--out-params",
        s(&root.join("temps.txt")),
        "--out-dir",
        s(&root.join("cal")),
    ]);
    let raw = fs::read_to_string(root.join("raw/metrics.csv")).unwrap();
    let cal = fs::read_to_string(root.join("cal/metrics.csv")).unwrap();
    assert_eq!(metric(&raw, "miou"), metric(&cal, "miou"));
    assert_eq!(metric(&raw, "iou"), metric(&cal, "iou"));
    assert!(fs::read_to_string(root.join("temps.txt")).unwrap().contains("temperature = "));
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        pipeline(d, "hau");
        ok(&["report", "--dump", s(&d.join("dumps/test.occd")), "--out-dir", s(&d.join("rep"))]);
    }
    for f in ["dumps/test.occd", "dumps/val.occd", "model.json", "rep/metrics.csv", "rep/rejection_sem.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sigma_uncertainty_without_sigmas_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    pipeline(root, "baseline");
    let out = occrel(&[
        "eval",
        "--dump",
        s(&root.join("dumps/test.occd")),
        "--uncertainty",
        "sigma",
        "--out-dir",
        s(&root.join("e")),
    ]);
    assert!(!out.status.success());
    assert_ne!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigmas"));
}

#[test]
fn perturb_writes_a_readable_dump() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    pipeline(root, "baseline");
    let out = root.join("noisy.occd");
    ok(&[
        "perturb",
        "--dump",
        s(&root.join("dumps/test.occd")),
        "--kind",
        "logit-noise",
        "--magnitude",
        "1.0",
        "--seed",
        "1",
        "--out",
        s(&out),
    ]);
    ok(&["eval", "--dump", s(&out), "--out-dir", s(&root.join("e"))]);
}

#[test]
fn unknown_flag_exits_with_usage() {
    let out = occrel(&["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("usage"));
    assert_eq!(occrel(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn corrupt_dump_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.occd");
    fs::write(&p, b"NOPE0000000000000000000000").unwrap();
    let out = occrel(&["eval", "--dump", s(&p), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));
}
