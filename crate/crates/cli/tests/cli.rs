use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use octa_cli::{hash_artifact, run_pipeline, Outcome, PipelineConfig};
use serde_json::{json, Value};

fn octa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_octa")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// A small phantom and a config that trains for two steps.
fn setup(dir: &Path) -> PathBuf {
    write_json(&dir.join("spec.json"), &json!({ "dims": [6, 32, 32], "n_trees": 3, "seed": 3 }));
    let o = octa(dir, &["phantom", "--spec", "spec.json", "--out", "ph"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = dir.join("min.json");
    write_json(
        &cfg,
        &json!({
            "input": "ph/volume.raw",
            "ground_truth": "ph/mask.raw",
            "output_dir": "run",
            "model": { "dn_channels": [4, 4], "enc_channels": [4, 4], "dec_channels": [4], "epochs": 1 },
            "augmentation": { "window": [32, 32], "windows_per_slice": 1 },
            "training": { "max_steps": 2 },
            "methods": ["kmeans", "otsu", "life"]
        }),
    );
    cfg
}

#[test]
fn pipeline_writes_every_artifact_then_skips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    let o = octa(tmp.path(), &["--jobs", "1", "pipeline", "--config", "min.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = tmp.path().join("run");
    for f in ["lif.raw", "ce_lif.raw", "latent.raw", "mask.raw", "report.csv", "report.json", "model.ckpt", "train.csv"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    for f in ["lif", "latent", "mask", "report", "model"] {
        let prov: Value = serde_json::from_str(&std::fs::read_to_string(run.join(format!("{f}.prov.json"))).unwrap()).unwrap();
        assert!(prov["tool_version"].as_str().unwrap().starts_with("octa-cli"));
    }
    let csv = std::fs::read_to_string(run.join("report.csv")).unwrap();
    assert!(csv.starts_with("method,tpr,fpr,accuracy,dice\n"));
    assert_eq!(csv.lines().count(), 4);

    // logs are one JSON object per line
    for line in String::from_utf8_lossy(&o.stderr).lines() {
        serde_json::from_str::<Value>(line).unwrap_or_else(|_| panic!("not JSON: {line}"));
    }

    let before = hash_artifact(&run.join("mask.raw")).unwrap();
    let again = run_pipeline(&PipelineConfig::load(&cfg).unwrap(), false).unwrap();
    assert_eq!(again.stages.len(), 6);
    assert!(again.stages.iter().all(|(_, o)| *o == Outcome::Skipped), "{:?}", again.stages);
    assert_eq!(code(&octa(tmp.path(), &["pipeline", "--config", "min.json"])), 0);
    assert_eq!(hash_artifact(&run.join("mask.raw")).unwrap(), before);
}

#[test]
fn changed_parameters_rerun_downstream_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::load(&setup(tmp.path())).unwrap();
    run_pipeline(&cfg, false).unwrap();
    let mut changed = cfg.clone();
    changed.binarize.min_island = 5;
    let r = run_pipeline(&changed, false).unwrap();
    let ran: Vec<_> = r.stages.iter().filter(|(_, o)| *o == Outcome::Ran).map(|(n, _)| *n).collect();
    assert_eq!(ran, ["binarize", "eval"]);
    let forced = run_pipeline(&changed, true).unwrap();
    assert!(forced.stages.iter().all(|(_, o)| *o == Outcome::Ran));
}

#[test]
fn reruns_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    for out in ["a", "b"] {
        let o = octa(tmp.path(), &["--jobs", "1", "pipeline", "--config", "min.json", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["preprocessed.raw", "lif.raw", "ce_lif.raw", "model.ckpt", "latent.raw", "mask.raw", "report.json", "train.csv"] {
        let (a, b) = (tmp.path().join("a").join(f), tmp.path().join("b").join(f));
        assert_eq!(hash_artifact(&a).unwrap(), hash_artifact(&b).unwrap(), "{f}");
    }
}

#[test]
fn missing_input_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    write_json(&tmp.path().join("c.json"), &json!({ "output_dir": "x" }));
    let o = octa(tmp.path(), &["pipeline", "--config", "c.json"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing input"));
    assert!(!tmp.path().join("x").exists());

    write_json(&tmp.path().join("c.json"), &json!({ "input": "nope.raw", "output_dir": "x" }));
    assert_eq!(code(&octa(tmp.path(), &["pipeline", "--config", "c.json"])), 2);
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn bad_arguments_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&octa(tmp.path(), &["lif", "--bogus"])), 2);
    assert_eq!(code(&octa(tmp.path(), &["eval", "--gt", "g.raw", "--pred", "p.raw"])), 2);
    write_json(&tmp.path().join("c.json"), &json!({ "input": "v.raw", "not_a_key": 1 }));
    assert_eq!(code(&octa(tmp.path(), &["pipeline", "--config", "c.json"])), 2);
    write_json(&tmp.path().join("s.json"), &json!({ "dims": [0, 8, 8] }));
    assert_eq!(code(&octa(tmp.path(), &["phantom", "--spec", "s.json", "--out", "p"])), 2);
}

#[test]
fn help_documents_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let o = octa(tmp.path(), &["lif", "--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--in", "--r", "--out", "--config", "--jobs", "--log-level", "--force"] {
        assert!(text.contains(flag), "{flag} undocumented");
    }
}

#[test]
fn subcommands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_json(&d.join("spec.json"), &json!({ "dims": [5, 24, 24], "n_trees": 2, "seed": 8 }));
    let ok = |args: &[&str]| {
        let o = octa(d, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    ok(&["phantom", "--spec", "spec.json", "--out", "ph"]);
    assert!(d.join("ph/volume.raw").is_file() && d.join("ph/mask.raw").is_file());
    ok(&["phantom", "--spec", "spec.json", "--vessel-case", "1", "--out", "case"]);
    let case: Value = serde_json::from_str(&std::fs::read_to_string(d.join("case/case.json")).unwrap()).unwrap();
    assert_eq!(case["target_z"], 2);
    ok(&["preprocess", "--in", "ph/volume.raw", "--out", "pre"]);
    ok(&["lif", "--in", "pre/preprocessed.raw", "--r", "2", "--out", "fused"]);
    assert!(d.join("fused/lif.raw").is_file() && d.join("fused/ce_lif.raw").is_file());
    let prov: Value = serde_json::from_str(&std::fs::read_to_string(d.join("fused/lif.prov.json")).unwrap()).unwrap();
    assert_eq!(prov["params"]["fusion"]["R"], 2);
    ok(&["baseline", "--in", "ph/volume.raw", "--method", "otsu", "--out", "base"]);
    ok(&["binarize", "--in", "fused/lif.raw", "--out", "bin"]);
    let o = ok(&["eval", "--pred", "base/otsu_mask.raw", "--gt", "ph/mask.raw"]);
    let scores: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(scores["scores"]["dice"].as_f64().unwrap() > 0.0);
    let o = ok(&["eval", "--in", "ph/volume.raw", "--gt", "ph/mask.raw", "--methods", "kmeans,otsu", "--out", "rep", "--per-slice"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 3);
    assert!(d.join("rep/per_slice.csv").is_file());

    write_json(&d.join("tiny.json"), &json!({ "model": { "dn_channels": [2], "enc_channels": [2], "dec_channels": [2], "epochs": 1 }, "augmentation": { "window": [16, 16], "windows_per_slice": 1 } }));
    ok(&["train", "--in", "ph/volume.raw", "--config", "tiny.json", "--max-steps", "1", "--out", "model"]);
    ok(&["infer", "--in", "ph/volume.raw", "--model", "model/model.ckpt", "--out", "lat"]);
    assert!(d.join("lat/latent.raw").is_file());
    // life without a model is rejected up front
    let o = octa(d, &["eval", "--in", "ph/volume.raw", "--gt", "ph/mask.raw", "--methods", "life", "--out", "r2"]);
    assert_eq!(code(&o), 2);
}
