//! Drives the `distmorph` binary end to end on deliberately tiny settings.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use distmorph::morph::{MorphRunConfig, RunLayout};
use serde_json::Value;

fn distmorph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distmorph")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = distmorph(args);
    assert!(
        out.status.success(),
        "distmorph {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(distmorph(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(distmorph(&["morph"]).status.code(), Some(2));
    assert_eq!(distmorph(&["prepare-data", "--out", "x", "--stand-in", "sepia"]).status.code(), Some(2));
    assert_eq!(distmorph(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.json");
    let out = distmorph(&["morph", "--config", s(&missing), "--runs-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    let bad = ["prepare-data", "--out", s(tmp.path()), "--set", "image_size=20"];
    assert_eq!(distmorph(&bad).status.code(), Some(1));
}

struct Pipeline {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    runs: PathBuf,
}

fn pipeline() -> Pipeline {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let data = root.join("data");
    let out = ok(&["prepare-data", "--stand-in", "recolor", "--out", s(&data), "--set", "image_size=16", "--seed", "3"]);
    assert_eq!(out.lines().count(), 2);
    let a: Value = serde_json::from_str(&std::fs::read_to_string(data.join("a.json")).unwrap()).unwrap();
    assert_eq!((a["image_size"].as_u64(), a["seed"].as_u64(), a["sample_count"].as_u64()), (Some(16), Some(3), Some(4000)));
    assert!(a["partition"].is_object() || a["partition"].is_string(), "{a}");

    let gan = root.join("gan");
    ok(&[
        "pretrain",
        "--dataset",
        s(&data.join("a.json")),
        "--out",
        s(&gan),
        "--set",
        "gan.iterations=3",
        "--set",
        "gan.batch_size=4",
        "--set",
        "gan.latent_dim=8",
        "--set",
        "gan.g_width=2",
        "--set",
        "gan.d_width=2",
        "--set",
        "oracle.width=2",
        "--set",
        "oracle.train.backbone_iterations=3",
        "--set",
        "oracle.train.min_accuracy=0",
    ]);
    for f in ["generator.ckpt", "discriminator.ckpt", "oracle.ckpt", "pretrain_report.json", "train_log.jsonl", "pretrain_config.json"] {
        assert!(gan.join(f).exists(), "{f}");
    }
    let cls = root.join("classifier");
    for mode in ["contrastive", "joint"] {
        ok(&[
            "train-classifier",
            "--mode",
            mode,
            "--a",
            s(&data.join("a.json")),
            "--b",
            s(&data.join("b.json")),
            "--out",
            s(&cls),
            "--set",
            "width=2",
            "--set",
            "train.backbone_iterations=0",
            "--set",
            "train.iterations=3",
            "--set",
            "train.min_accuracy=0",
        ]);
        assert!(cls.join(format!("{mode}.ckpt")).exists());
        let report: Value = serde_json::from_str(&std::fs::read_to_string(cls.join(format!("{mode}_report.json"))).unwrap()).unwrap();
        assert_eq!(report["mode"], mode);
    }
    for mode in ["contrastive", "joint"] {
        let mut cfg = MorphRunConfig::new(mode, gan.join("generator.ckpt"), gan.join("discriminator.ckpt"), cls.join(format!("{mode}.ckpt")));
        cfg.eval_oracle_ckpt = Some(gan.join("oracle.ckpt"));
        cfg.max_iterations = 6;
        cfg.snapshot_at = vec![3];
        std::fs::write(root.join(format!("{mode}.json")), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    }
    let runs = root.join("runs");
    Pipeline { _tmp: tmp, root, runs }
}

#[test]
fn full_pipeline_through_the_binary() {
    let p = pipeline();
    let cfg = |m: &str| p.root.join(format!("{m}.json"));

    ok(&["morph", "--config", s(&cfg("contrastive")), "--runs-dir", s(&p.runs), "--deterministic"]);
    let first = std::fs::read(RunLayout::new(&p.runs, "contrastive").metrics()).unwrap();
    ok(&["morph", "--config", s(&cfg("contrastive")), "--runs-dir", s(&p.runs), "--deterministic"]);
    let second = std::fs::read(RunLayout::new(&p.runs, "contrastive").metrics()).unwrap();
    assert_eq!(first, second);
    let layout = RunLayout::new(&p.runs, "contrastive");
    assert_eq!(layout.snapshot_iterations(), vec![3, 6]);
    assert!(layout.eval_report(0).exists() && layout.eval_report(3).exists() && layout.eval_report(6).exists());

    ok(&["morph", "--config", s(&cfg("joint")), "--runs-dir", s(&p.runs), "--set", "lambda_cls=0.3"]);
    let saved: MorphRunConfig = distmorph::fsutil::read_json(&RunLayout::new(&p.runs, "joint").config()).unwrap();
    assert_eq!(saved.lambda_cls, 0.3);

    let out = ok(&["report", "--run", "contrastive", "--compare", "joint", "--runs-dir", s(&p.runs)]);
    assert!(out.contains("report.csv"));
    let csv = std::fs::read_to_string(layout.dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let cmp: Value =
        serde_json::from_str(&std::fs::read_to_string(RunLayout::new(&p.runs, "joint").dir.join("comparison.json")).unwrap())
            .unwrap();
    let iterations: Vec<u64> = cmp.as_array().unwrap().iter().map(|c| c["iteration"].as_u64().unwrap()).collect();
    assert_eq!(iterations, vec![0, 3, 6]);
    assert_eq!(cmp[0]["joint_run"], "joint");

    let grid = serde_json::json!({
        "base": serde_json::from_str::<Value>(&std::fs::read_to_string(cfg("contrastive")).unwrap()).unwrap(),
        "lambda_cls": [0.1, 1.0],
        "lambda_disc": [1.0],
    });
    let grid_path = p.root.join("grid.json");
    std::fs::write(&grid_path, grid.to_string()).unwrap();
    let out = ok(&["sweep", "--grid", s(&grid_path), "--runs-dir", s(&p.runs), "--parallel", "2", "--set", "base.max_iterations=3", "--set", "base.snapshot_at=[]"]);
    assert!(out.contains("index.json"));
    let index: Value =
        serde_json::from_str(&std::fs::read_to_string(p.runs.join("contrastive-sweep/index.json")).unwrap()).unwrap();
    assert_eq!(index["entries"].as_array().unwrap().len(), 2);
}

#[test]
fn report_without_evaluations_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = distmorph(&["report", "--run", "ghost", "--runs-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
}
