//! End-to-end tests of the `fei` binary: exit codes, output layout, and
//! byte-identical reruns. A deliberately tiny fixture keeps these fast; the
//! model quality does not matter here.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fei")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("failed to spawn the fei binary")
}

fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "fei {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Shared scratch area with a tiny trained model and a small dataset.
struct Ctx {
    root: PathBuf,
    model: PathBuf,
    data: PathBuf,
}

fn ctx() -> &'static Ctx {
    static CTX: OnceLock<Ctx> = OnceLock::new();
    CTX.get_or_init(|| {
        let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("fei-cli-tests");
        let _ = fs::remove_dir_all(&root);
        fs::create_dir_all(&root).unwrap();
        let fix = root.join("fixture");
        run_ok(&[
            "train-fixture",
            "--train-count",
            "96",
            "--test-count",
            "12",
            "--epochs",
            "2",
            "--accuracy-target",
            "0.0",
            "--out",
            fix.to_str().unwrap(),
        ]);
        let data = root.join("data");
        run_ok(&[
            "gen-data",
            "--seed",
            "21",
            "--count",
            "3",
            "--out",
            data.to_str().unwrap(),
        ]);
        Ctx {
            model: fix.join("fixture.weights"),
            root,
            data,
        }
    })
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            out.insert(
                entry.file_name().to_string_lossy().into_owned(),
                fs::read(entry.path()).unwrap(),
            );
        }
    }
    out
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| {
        panic!(
            "stderr is not JSON: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

#[test]
fn unknown_clip_rule_is_a_usage_error() {
    let c = ctx();
    let out = run(&[
        "attribute",
        "--model",
        c.model.to_str().unwrap(),
        "--image",
        c.data.join("img_0000.pgm").to_str().unwrap(),
        "--clip",
        "bogus",
        "--out",
        c.root.join("never").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_fraction_list_is_a_usage_error() {
    let c = ctx();
    let out = run(&[
        "attribute",
        "--model",
        c.model.to_str().unwrap(),
        "--image",
        c.data.join("img_0000.pgm").to_str().unwrap(),
        "--fractions",
        "0.9,zebra",
        "--out",
        c.root.join("never").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_model_reports_a_json_error() {
    let c = ctx();
    let out = run(&[
        "attribute",
        "--model",
        c.root.join("missing.weights").to_str().unwrap(),
        "--image",
        c.data.join("img_0000.pgm").to_str().unwrap(),
        "--out",
        c.root.join("never").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["code"], "io");
    assert!(err["message"].is_string());
}

#[test]
fn out_of_range_target_reports_invalid_argument() {
    let c = ctx();
    let out = run(&[
        "reconstruct",
        "--model",
        c.model.to_str().unwrap(),
        "--image",
        c.data.join("img_0000.pgm").to_str().unwrap(),
        "--target",
        "7",
        "--iters",
        "0",
        "--out",
        c.root.join("never").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["code"], "invalid-argument");
}

#[test]
fn gen_data_layout_and_determinism() {
    let c = ctx();
    let again = c.root.join("data-again");
    run_ok(&[
        "gen-data",
        "--seed",
        "21",
        "--count",
        "3",
        "--out",
        again.to_str().unwrap(),
    ]);
    let first = dir_bytes(&c.data);
    let second = dir_bytes(&again);
    for name in [
        "img_0000.pgm",
        "img_0001.pgm",
        "img_0002.pgm",
        "mask_0000.pgm",
        "mask_0002.pgm",
        "dataset.json",
    ] {
        assert_eq!(first[name], second[name], "{name} differs between runs");
    }
    let dataset: serde_json::Value =
        serde_json::from_slice(&first["dataset.json"]).unwrap();
    assert_eq!(dataset["seed"], 21);
    assert_eq!(dataset["count"], 3);
    assert_eq!(dataset["split"], "test");
    assert_eq!(dataset["class_names"].as_array().unwrap().len(), 3);
    assert_eq!(dataset["labels"].as_array().unwrap().len(), 3);
}

#[test]
fn attribute_rerun_from_manifest_is_byte_identical() {
    let c = ctx();
    let out_dir = c.root.join("attr");
    let image = c.data.join("img_0001.pgm");
    run_ok(&[
        "attribute",
        "--model",
        c.model.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--clip",
        "ibm",
        "--iters",
        "4",
        "--seed",
        "9",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "attribute");
    assert_eq!(manifest["resolved_flags"]["clip"], "ibm");
    assert!(manifest["input_hashes"]["model"].as_str().unwrap().len() == 64);

    // Rebuild the argv from the manifest and rerun over the same outputs.
    let snapshot = dir_bytes(&out_dir);
    let mut argv: Vec<String> = vec![manifest["subcommand"].as_str().unwrap().to_string()];
    for (k, v) in manifest["resolved_flags"].as_object().unwrap() {
        argv.push(format!("--{k}"));
        argv.push(v.as_str().unwrap().to_string());
    }
    let argv_refs: Vec<&str> = argv.iter().map(|s| s.as_str()).collect();
    run_ok(&argv_refs);
    assert_eq!(snapshot, dir_bytes(&out_dir), "rerun changed some output");
}

#[test]
fn l1_mode_forces_the_single_full_fraction() {
    let c = ctx();
    let out_dir = c.root.join("attr-l1");
    run_ok(&[
        "attribute",
        "--model",
        c.model.to_str().unwrap(),
        "--image",
        c.data.join("img_0000.pgm").to_str().unwrap(),
        "--mode",
        "l1",
        "--fractions",
        "0.9,0.5",
        "--iters",
        "4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let sidecar: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir.join("attribution.json")).unwrap()).unwrap();
    assert_eq!(sidecar["fractions"], serde_json::json!([1.0]));
    assert!(out_dir.join("alpha_1.pgm").exists());
    assert!(!out_dir.join("alpha_0.9.pgm").exists());
    assert!(out_dir.join("M.pgm").exists());
    assert!(out_dir.join("heatmap.ppm").exists());
}

#[test]
fn zero_iteration_reconstruction_is_input_independent_noise() {
    let c = ctx();
    let (a, b) = (c.root.join("rec-a"), c.root.join("rec-b"));
    for (dir, img) in [(&a, "img_0000.pgm"), (&b, "img_0001.pgm")] {
        run_ok(&[
            "reconstruct",
            "--model",
            c.model.to_str().unwrap(),
            "--image",
            c.data.join(img).to_str().unwrap(),
            "--iters",
            "0",
            "--noise-seed",
            "4",
            "--out",
            dir.to_str().unwrap(),
        ]);
    }
    assert_eq!(
        fs::read(a.join("reconstruction.pgm")).unwrap(),
        fs::read(b.join("reconstruction.pgm")).unwrap(),
        "zero-iteration output depends on the input image"
    );
}

#[test]
fn eval_writes_report_and_summary() {
    let c = ctx();
    let report = c.root.join("eval").join("report.csv");
    run_ok(&[
        "eval",
        "--model",
        c.model.to_str().unwrap(),
        "--dataset",
        c.data.to_str().unwrap(),
        "--methods",
        "ibm,none-l1",
        "--seeds",
        "1",
        "--iters",
        "3",
        "--out",
        report.to_str().unwrap(),
    ]);
    let rows = fs::read_to_string(&report).unwrap();
    assert!(rows.starts_with("method,clip_mode,objective,metric,auc,image_count,seed\n"));
    assert_eq!(rows.matches("\nibm,").count() + rows.matches("\nnone-l1,").count(), 4);
    let summary = fs::read_to_string(report.with_file_name("summary.csv")).unwrap();
    assert!(summary.contains("\nibm,ibm,preservation,"));
    assert!(summary.contains("\nnone-l1,none,preservation,"));
    assert!(report.with_file_name("manifest.json").exists());
}

#[test]
fn defense_reports_one_row_per_clip_rule() {
    let c = ctx();
    let out_dir = c.root.join("defense");
    run_ok(&[
        "defense",
        "--model",
        c.model.to_str().unwrap(),
        "--clips",
        "none,ibm",
        "--iters",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(out_dir.join("defense.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "clip_mode,successes,attempts,rate");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("none,"));
    assert!(lines[2].starts_with("ibm,"));
}

#[test]
fn sanity_stage_zero_agrees_with_itself() {
    let c = ctx();
    let out_dir = c.root.join("sanity0");
    run_ok(&[
        "sanity",
        "--model",
        c.model.to_str().unwrap(),
        "--image",
        c.data.join("img_0002.pgm").to_str().unwrap(),
        "--stages",
        "0",
        "--iters",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let sidecar: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir.join("sanity.json")).unwrap()).unwrap();
    let stages = sidecar["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 1);
    assert_eq!(stages[0]["spearman_vs_original"], 1.0);
    assert!(out_dir.join("map_stage_0.pgm").exists());
}

#[test]
fn too_many_sanity_stages_is_a_runtime_error() {
    let c = ctx();
    let out = run(&[
        "sanity",
        "--model",
        c.model.to_str().unwrap(),
        "--image",
        c.data.join("img_0000.pgm").to_str().unwrap(),
        "--stages",
        "99",
        "--iters",
        "2",
        "--out",
        c.root.join("never").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["code"], "layer-index-out-of-range");
}

#[test]
fn thread_cap_env_is_validated() {
    let c = ctx();
    let ok = Command::new(bin())
        .env("FEI_THREADS", "1")
        .args([
            "gen-data",
            "--count",
            "1",
            "--out",
            c.root.join("threads-ok").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(ok.status.success());
    let bad = Command::new(bin())
        .env("FEI_THREADS", "many")
        .args([
            "gen-data",
            "--count",
            "1",
            "--out",
            c.root.join("threads-bad").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(stderr_json(&bad)["code"], "invalid-argument");
}
