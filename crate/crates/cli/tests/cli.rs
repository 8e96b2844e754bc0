use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multilattice")).arg("--quiet").args(args).output().expect("binary runs")
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn stability_certificate_for_hex_preset() {
    let out = run(&["stability", "--crystal", "preset:hex2d", "--grid", "16"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["pass"], true);
    assert_eq!(v["seed"], 0);
}

#[test]
fn unstable_crystal_exits_3_with_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("cert.json");
    let out = run(&["stability", "--crystal", "preset:square1-soft", "--grid", "8", "--out", cert.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let v = json_file(&cert);
    assert_eq!(v["pass"], false);
    assert!(v["worst_mode"]["eigenvalue"].as_f64().unwrap() < 0.0);
}

#[test]
fn missing_crystal_file_exits_2() {
    let out = run(&["stability", "--crystal", "/nonexistent/crystal.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("crystal.json"));
}

#[test]
fn unknown_flag_exits_2_with_usage() {
    let out = run(&["relax", "--crystal", "preset:hex2d", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn malformed_crystal_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"d": 2, "n": 2, "F": [[1, 0], [2, 0]], "shifts": [[0, 0]], "triplets": [], "potential": {"kind": "harmonic"}}"#).unwrap();
    let out = run(&["stability", "--crystal", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn relax_then_decay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("field.bin");
    let report = dir.path().join("report.json");
    let out = run(&[
        "--seed",
        "7",
        "relax",
        "--crystal",
        "preset:hex2d",
        "--rwin",
        "16",
        "--out",
        field.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json_file(&report);
    assert_eq!(r["seed"], 7);
    assert_eq!(r["solve"]["converged"], true);

    let decay = dir.path().join("decay.json");
    let out = run(&[
        "decay",
        "--crystal",
        "preset:hex2d",
        "--field",
        field.to_str().unwrap(),
        "--orders",
        "1",
        "--r-min",
        "2",
        "--out",
        decay.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let d = json_file(&decay);
    let labels: Vec<&str> = d["fits"].as_array().unwrap().iter().map(|f| f["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["D1U", "D0p1"]);
}

#[test]
fn phonon_csv_has_sorted_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("spectrum.csv");
    let out = run(&["phonon", "--crystal", "preset:hex2d", "--grid", "4", "--out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "k0,k1,lambda0,lambda1,lambda2,lambda3,lambda4,lambda5");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 16);
    for r in rows {
        assert!(r[2..].windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn cb_claimant_report() {
    let out = run(&["cb", "--crystal", "preset:square1", "--check", "claimant", "--probes", "20"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["max_relgap"].as_f64().unwrap() < 1e-8);
}

#[test]
fn greens_fit_writes_annuli() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("annuli.csv");
    let rep = dir.path().join("greens.json");
    let out = run(&[
        "greens",
        "--crystal",
        "preset:hex2d",
        "--N",
        "64",
        "--blocks",
        "shift-family",
        "--fit",
        "--out",
        rep.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_file(&rep);
    assert_eq!(v["fits"].as_array().unwrap().len(), 1);
    assert_eq!(v["fits"][0]["predicted"], -2);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("label,r,sup,log_r,log_sup"));
}

#[test]
fn harmonic_study_includes_cross_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "study",
        "--crystal",
        "preset:hex2d-harmonic",
        "--rwin",
        "24",
        "--N",
        "64",
        "--grid",
        "16",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_file(&dir.path().join("study_report.json"));
    for stage in ["stability", "relax", "residual", "greens", "decay", "cross_check"] {
        assert!(v.get(stage).is_some(), "missing {stage}");
    }
    assert!(v["cross_check"]["sup_gap"].as_f64().unwrap() < 1e-3);
    assert!(dir.path().join("field.bin").exists());
}

#[test]
fn zero_defect_study_skips_fits() {
    let dir = tempfile::tempdir().unwrap();
    let doc = run(&["presets", "--show", "hex2d"]);
    let mut v: Value = serde_json::from_slice(&doc.stdout).unwrap();
    v.as_object_mut().unwrap().remove("defect");
    let path = dir.path().join("clean.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let out = run(&[
        "study",
        "--crystal",
        path.to_str().unwrap(),
        "--rwin",
        "16",
        "--N",
        "32",
        "--grid",
        "8",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let r = json_file(&dir.path().join("study_report.json"));
    assert_eq!(r["relax"]["max_displacement"], 0.0);
    assert!(r["decay"]["fits"].as_array().unwrap().is_empty());
    assert!(r.get("cross_check").is_none());
    for s in r["decay"]["skipped"].as_array().unwrap() {
        assert!(s["reason"].as_str().unwrap().contains("zero defect"));
    }
}

#[test]
fn reports_are_reproducible() {
    let a = run(&["--seed", "3", "cb", "--crystal", "preset:hex2d", "--check", "claimant", "--probes", "10"]);
    let b = run(&["--seed", "3", "cb", "--crystal", "preset:hex2d", "--check", "claimant", "--probes", "10"]);
    assert_eq!(a.stdout, b.stdout);
}
