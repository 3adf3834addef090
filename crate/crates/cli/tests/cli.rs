use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use quake_pda::dataset::{BuildOptions, LabelScheme, MetadataSchema};
use quake_pda::experiment::{BuildConfig, SchemaChoice};
use quake_pda::model::file_hash;
use quake_pda::synthetic;
use serde_json::Value;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quake-pda"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn err_json(out: &Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn raw_inputs(dir: &Path) -> std::path::PathBuf {
    let town = synthetic::town(40, MetadataSchema::turkiye_s(), LabelScheme::S5, 2);
    synthetic::write_raw(&town, dir).unwrap();
    let cfg = BuildConfig {
        footprints: dir.join("footprints.geojson"),
        ground_truth: dir.join("ground_truth.csv"),
        fields: dir.join("fields"),
        scenes: dir.join("scenes"),
        schema: SchemaChoice::Named("turkiye_s".into()),
        scheme: LabelScheme::S5,
        options: BuildOptions {
            tile_size: 16,
            ..BuildOptions::default()
        },
        train_fraction: 0.75,
        seed: 2,
    };
    let p = dir.join("build.json");
    fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let build_cfg = raw_inputs(&root.join("raw"));
    let ds = root.join("ds");
    let v = ok_json(&cli(&["build-dataset", "--config", s(&build_cfg), "--out", s(&ds)]));
    assert_eq!(v["records"], 40);
    assert!(ds.join("manifest.json").is_file());

    // JSON sets 4 epochs, the flag wins.
    let exp = root.join("exp.json");
    fs::write(
        &exp,
        format!(
            r#"{{"name": "qmf", "dataset": "{}", "seed": 3, "train": {{"epochs": 4, "batch_size": 10, "base_lr": 0.001}}}}"#,
            s(&ds)
        ),
    )
    .unwrap();
    let runs = root.join("runs");
    let v = ok_json(&cli(&["train", "--config", s(&exp), "--epochs", "1", "--out", s(&runs)]));
    let run_dir = Path::new(v["run_dir"].as_str().unwrap()).to_path_buf();
    let manifest: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["train"]["epochs"], 1);

    // Rerun from the manifest alone.
    let rerun = root.join("rerun");
    let v2 = ok_json(&cli(&["train", "--config", s(&run_dir.join("manifest.json")), "--out", s(&rerun)]));
    let run2 = Path::new(v2["run_dir"].as_str().unwrap()).to_path_buf();
    for f in ["metrics.json", "checkpoint.ckpt"] {
        assert_eq!(fs::read(run_dir.join(f)).unwrap(), fs::read(run2.join(f)).unwrap(), "{f}");
    }

    let ckpt = run_dir.join("checkpoint.ckpt");
    let before = file_hash(&ckpt).unwrap();
    let v = ok_json(&cli(&["evaluate", "--checkpoint", s(&ckpt), "--dataset", s(&ds), "--mask", "ALL"]));
    assert!(Path::new(v["out"].as_str().unwrap()).ends_with("eval_ALL"));
    assert!(run_dir.join("eval_ALL/metrics.json").is_file());
    assert_eq!(file_hash(&ckpt).unwrap(), before);

    let v = ok_json(&cli(&[
        "explain", "--checkpoint", s(&ckpt), "--dataset", s(&ds), "--records", "1", "--samples", "10",
    ]));
    assert_eq!(v["records"], 1);
    assert!(run_dir.join("explain/shap_values.csv").is_file());

    let v = ok_json(&cli(&[
        "generalize", "--dataset", s(&ds), "--name", "grid", "--epochs", "1", "--train-regions", "WEST",
        "--test-regions", "WEST,EAST", "--out", s(&runs),
    ]));
    assert_eq!(v["regions"].as_array().unwrap().len(), 2);

    let rep = root.join("rep");
    let v = ok_json(&cli(&[
        "report",
        s(&run_dir),
        s(&runs.join("grid")),
        s(&runs.join("missing")),
        "--out",
        s(&rep),
    ]));
    assert_eq!(v["absent"], serde_json::json!(["missing"]));
    assert!(rep.join("generalization_delta.csv").is_file());
}

#[test]
fn failures_are_json_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let nowhere = tmp.path().join("nowhere");
    let out = cli(&["train", "--dataset", s(&nowhere), "--out", s(tmp.path())]);
    let e = err_json(&out);
    assert_eq!(e["error"], "missing_dataset");
    assert_eq!(out.status.code(), Some(1));

    let out = cli(&["train", "--epochs", "many"]);
    assert_eq!(err_json(&out)["error"], "usage");
    assert_eq!(out.status.code(), Some(2));

    let out = cli(&["evaluate", "--checkpoint", s(&tmp.path().join("x.ckpt")), "--dataset", s(&nowhere)]);
    assert_eq!(err_json(&out)["error"], "missing_dataset");

    assert!(cli(&["--help"]).status.success());
}
