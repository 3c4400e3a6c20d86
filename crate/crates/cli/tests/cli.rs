use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn synth_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synth.json")
}

fn distest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distest")).args(args).output().unwrap()
}

fn run_in(config: &Path, out: &Path, args: &[&str]) -> Output {
    let mut all = args.to_vec();
    let (c, o) = (config.display().to_string(), out.display().to_string());
    all.extend(["--config", &c, "--out", &o]);
    distest(&all)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(synth_config()).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
    path
}

#[test]
fn full_synth_pipeline_writes_every_artifact() {
    let out = tempfile::tempdir().unwrap();
    let cfg = synth_config();
    for args in [
        &["train"][..],
        &["train-vae"],
        &["profile"],
        &["calibrate"],
        &["generate", "--mode", "baseline"],
        &["generate", "--mode", "vae"],
        &["report"],
    ] {
        let o = run_in(&cfg, out.path(), args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let root = out.path();
    for f in [
        "models/wide.json",
        "models/deep.json",
        "vae.json",
        "threshold.json",
        "calibration.json",
        "profile.json",
        "suites/baseline.jsonl",
        "suites/vae.jsonl",
        "suites/lambda_sweep.json",
        "report.json",
        "report.txt",
    ] {
        assert!(root.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(root.join("distest.log")).unwrap();
    assert_eq!(log.lines().count(), 7);
    assert!(log.lines().any(|l| l.contains("generate") && l.contains("seeds_sha256=")));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["suites"][1]["invalid"], 0);
}

#[test]
fn missing_config_flag_is_a_usage_error() {
    let o = distest(&["train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn unknown_subcommand_and_help() {
    assert_eq!(distest(&["bogus"]).status.code(), Some(1));
    assert_eq!(distest(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| v["sizes"]["seeds"] = "many".into());
    let o = run_in(&cfg, dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sizes.seeds"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), |v| v["generation"]["step_size"] = (-1.0).into());
    let o = run_in(&cfg, dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("generation"), "{}", stderr(&o));
}

#[test]
fn missing_dataset_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| {
        v["data"] = serde_json::json!({
            "kind": "idx",
            "train_images": "nope/train-images",
            "train_labels": "nope/train-labels",
            "test_images": "nope/test-images",
            "test_labels": "nope/test-labels",
            "invalid_images": "nope/inv-images",
            "invalid_labels": "nope/inv-labels"
        })
    });
    let o = run_in(&cfg, dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("data.train_images"), "{}", stderr(&o));
}

#[test]
fn stage_out_of_order_reports_missing_artifact() {
    let out = tempfile::tempdir().unwrap();
    let o = run_in(&synth_config(), out.path(), &["calibrate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("vae.json"), "{}", stderr(&o));
}

#[test]
fn corrupt_artifact_is_a_runtime_error() {
    let out = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(out.path().join("models")).unwrap();
    std::fs::write(out.path().join("models/wide.json"), b"{\"layers\": 3}").unwrap();
    let o = run_in(&synth_config(), out.path(), &["profile"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("layers"), "{}", stderr(&o));
}
