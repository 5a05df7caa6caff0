mod common;

use std::path::Path;

use distmorph::checkpoint::Checkpoint;
use distmorph::fsutil::read_jsonl;
use distmorph::gan::{Generator, GeneratorSpec};
use distmorph::morph::{
    run_morph, run_sweep, weighted_sum, MetricsRecord, MorphEngine, NoSteering, RunLayout, RunState, RunStatus,
    ScriptedSteering, SteeringCommand, SteeringKind, SweepGrid,
};
use distmorph::Error;

use common::{tiny_nets, TinyNets};

fn nets(tmp: &tempfile::TempDir) -> TinyNets {
    tiny_nets(&tmp.path().join("nets"))
}

fn short(nets: &TinyNets, id: &str, iterations: u64) -> distmorph::morph::MorphRunConfig {
    let mut cfg = nets.config(id);
    cfg.max_iterations = iterations;
    cfg.snapshot_at = vec![];
    cfg.grid_every = 0;
    cfg.deterministic = true;
    cfg
}

#[test]
fn weighted_sum_identities() {
    assert_eq!(weighted_sum(3.5, 2.0, 0.0, 1.0), 2.0);
    assert_eq!(weighted_sum(3.5, 2.0, 1.0, 0.0), 3.5);
    assert!((weighted_sum(1.0, 2.0, 0.7, 0.3) - 1.3).abs() < 1e-12);
    assert!((weighted_sum(1.0, 1.0, 0.7, 0.3) - 1.0).abs() < 1e-12);
}

#[test]
fn every_record_satisfies_the_weighted_sum() {
    let tmp = tempfile::tempdir().unwrap();
    let nets = nets(&tmp);
    for (lc, ld) in [(0.0, 1.0), (1.0, 0.0), (0.7, 0.3), (3.0, 0.1)] {
        let mut cfg = short(&nets, "ws", 5);
        cfg.lambda_cls = lc;
        cfg.lambda_disc = ld;
        let mut engine = MorphEngine::from_checkpoints(cfg).unwrap();
        for _ in 0..5 {
            let r = engine.step().unwrap();
            assert!(r.weighted_sum_residual() <= 1e-5 * r.loss_total.abs().max(1.0), "{r:?}");
            assert_eq!((r.lambda_cls, r.lambda_disc), (lc, ld));
        }
    }
}

#[test]
fn zero_learning_rate_leaves_generator_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let nets = nets(&tmp);
    let mut cfg = short(&nets, "lr0", 3);
    cfg.learning_rate = 0.0;
    let mut engine = MorphEngine::from_checkpoints(cfg).unwrap();
    let before = engine.generator().params.content_hash().unwrap();
    for _ in 0..3 {
        engine.step().unwrap();
    }
    assert_eq!(engine.generator().params.content_hash().unwrap(), before);
}

#[test]
fn only_the_generator_moves() {
    let tmp = tempfile::tempdir().unwrap();
    let nets = nets(&tmp);
    let mut cfg = short(&nets, "freeze", 20);
    cfg.debug_freeze_checks = true;
    let g0 = Generator::from_checkpoint(&Checkpoint::load(&nets.generator).unwrap(), candle_core::DType::F32, false)
        .unwrap()
        .params
        .content_hash()
        .unwrap();
    let art = run_morph(&cfg, &tmp.path().join("runs"), &mut NoSteering).unwrap();
    assert_eq!(art.final_state, RunState::Finished);
    assert_eq!(art.frozen_hashes_start, art.frozen_hashes_end);
    let snap = Checkpoint::load(&art.snapshots.last().unwrap().1).unwrap();
    let g1 = Generator::from_checkpoint(&snap, candle_core::DType::F32, false).unwrap();
    assert_ne!(g1.params.content_hash().unwrap(), g0);
    assert_eq!(snap.meta.iterations, 20);
}

#[test]
fn stop_command_ends_run_with_a_final_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let nets = nets(&tmp);
    let cfg = short(&nets, "stopper", 1000);
    let mut steering = ScriptedSteering::new(vec![SteeringCommand::stop(150)]);
    let runs = tmp.path().join("runs");
    let art = run_morph(&cfg, &runs, &mut steering).unwrap();
    assert_eq!(art.final_state, RunState::Stopped);
    assert_eq!(art.final_iteration, 150);
    let records: Vec<MetricsRecord> = read_jsonl(&art.metrics_path).unwrap();
    assert_eq!(records.last().unwrap().iteration, 150);
    assert_eq!(records.len(), 150);
    let layout = RunLayout::new(&runs, "stopper");
    assert!(layout.snapshot(150).exists());
    let status = RunStatus::read(&layout).unwrap();
    assert_eq!((status.state, status.iteration), (RunState::Stopped, 150));
}

#[test]
fn steering_applies_at_the_next_boundary() {
    let tmp = tempfile::tempdir().unwrap();
    let nets = nets(&tmp);
    let cfg = short(&nets, "steer", 12);
    let mut steering = ScriptedSteering::new(vec![
        SteeringCommand::set_lambdas(2.5, 0.5, 4),
        SteeringCommand::snapshot_now(7),
        SteeringCommand::set_lambdas(0.0, 0.0, 9),
    ]);
    let runs = tmp.path().join("runs");
    let art = run_morph(&cfg, &runs, &mut steering).unwrap();
    let records: Vec<MetricsRecord> = read_jsonl(&art.metrics_path).unwrap();
    for r in &records[..4] {
        assert_eq!((r.lambda_cls, r.lambda_disc), (1.0, 1.0), "iteration {}", r.iteration);
    }
    for r in &records[4..] {
        assert_eq!((r.lambda_cls, r.lambda_disc), (2.5, 0.5), "iteration {}", r.iteration);
    }
    let events = &records[4].steering;
    assert_eq!(events.len(), 1);
    assert_eq!((events[0].kind, events[0].applied_at_iteration, events[0].accepted), (SteeringKind::SetLambdas, 4, true));
    let rejected = &records[9].steering[0];
    assert!(!rejected.accepted);
    assert!(rejected.detail.contains("zero"));
    assert_eq!(RunLayout::new(&runs, "steer").snapshot_iterations(), vec![7, 12]);
}

#[test]
fn configured_snapshots_and_grids_are_written() {
    let tmp = tempfile::tempdir().unwrap();
    let nets = nets(&tmp);
    let mut cfg = short(&nets, "layout", 10);
    cfg.snapshot_at = vec![3, 6];
    cfg.grid_every = 5;
    let runs = tmp.path().join("runs");
    run_morph(&cfg, &runs, &mut NoSteering).unwrap();
    let layout = RunLayout::new(&runs, "layout");
    assert_eq!(layout.snapshot_iterations(), vec![3, 6, 10]);
    assert_eq!(layout.grid_iterations(), vec![0, 3, 5, 6, 10]);
    let png = image::open(layout.grid(0)).unwrap();
    let side = 3 * 16 * 4;
    assert!(png.width() >= side && png.width() < side + 16 && png.width() == png.height());
    let saved: distmorph::morph::MorphRunConfig = distmorph::fsutil::read_json(&layout.config()).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn both_lambdas_zero_is_rejected_up_front() {
    let tmp = tempfile::tempdir().unwrap();
    let nets = nets(&tmp);
    let mut cfg = short(&nets, "zero", 5);
    cfg.lambda_cls = 0.0;
    cfg.lambda_disc = 0.0;
    let fields = cfg.validate().unwrap_err();
    assert!(fields.iter().any(|f| f.field.starts_with("lambda")));
    let runs = tmp.path().join("runs");
    assert!(matches!(run_morph(&cfg, &runs, &mut NoSteering), Err(Error::Config(_))));
    assert!(!runs.join("zero").exists());
}

#[test]
fn identical_configs_give_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let nets = nets(&tmp);
    let cfg = short(&nets, "det", 15);
    let a = run_morph(&cfg, &tmp.path().join("r1"), &mut NoSteering).unwrap();
    let b = run_morph(&cfg, &tmp.path().join("r2"), &mut NoSteering).unwrap();
    assert_eq!(std::fs::read(a.metrics_path).unwrap(), std::fs::read(b.metrics_path).unwrap());
    let mut other = cfg.clone();
    other.seed = 6;
    let c = run_morph(&other, &tmp.path().join("r3"), &mut NoSteering).unwrap();
    assert_ne!(std::fs::read(&c.metrics_path).unwrap(), std::fs::read(tmp.path().join("r1/det/metrics.jsonl")).unwrap());
}

fn save_generator(spec: GeneratorSpec, path: &Path) {
    let g = Generator::init(spec, 1, candle_core::DType::F32, false).unwrap();
    g.to_checkpoint(Default::default()).unwrap().save(path).unwrap();
}

#[test]
fn incompatible_checkpoints_fail_before_any_step() {
    let tmp = tempfile::tempdir().unwrap();
    let nets = nets(&tmp);
    let runs = tmp.path().join("runs");

    let wrong_classes = tmp.path().join("g4.ckpt");
    let mut spec = GeneratorSpec::new(4, 16, 3);
    spec.width_multiplier = 2;
    save_generator(spec, &wrong_classes);
    let wrong_size = tmp.path().join("g32.ckpt");
    let mut spec = GeneratorSpec::new(3, 32, 3);
    spec.width_multiplier = 2;
    save_generator(spec, &wrong_size);

    for g in [wrong_classes, wrong_size] {
        let mut cfg = short(&nets, "bad", 5);
        cfg.generator_ckpt = g;
        let err = run_morph(&cfg, &runs, &mut NoSteering).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(!runs.join("bad").exists());
    }
    let mut cfg = short(&nets, "swapped", 5);
    cfg.classifier_ckpt = nets.discriminator.clone();
    assert!(matches!(run_morph(&cfg, &runs, &mut NoSteering), Err(Error::Config(_))));
}

#[test]
fn sweep_runs_every_lambda_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let nets = nets(&tmp);
    let grid = SweepGrid {
        base: short(&nets, "grid", 4),
        lambda_cls: vec![0.1, 1.0],
        lambda_disc: vec![0.3, 3.0],
    };
    let runs = tmp.path().join("runs");
    let (index, sweep_dir) = run_sweep(&grid, &runs, 2).unwrap();
    assert_eq!(index.entries.len(), 4);
    assert!(sweep_dir.join("index.json").exists());
    assert!(sweep_dir.join("index.csv").exists());
    for e in &index.entries {
        assert_eq!(e.state, Some(RunState::Finished), "{e:?}");
        assert_eq!(e.final_iteration, 4);
        let records: Vec<MetricsRecord> = read_jsonl(&RunLayout::new(&runs, &e.run_id).metrics()).unwrap();
        assert_eq!((records[0].lambda_cls, records[0].lambda_disc), (e.lambda_cls, e.lambda_disc));
    }
    let mut ids: Vec<&str> = index.entries.iter().map(|e| e.run_id.as_str()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 4);
}

#[test]
fn sweep_skips_the_all_zero_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let nets = nets(&tmp);
    let grid = SweepGrid {
        base: short(&nets, "z", 1),
        lambda_cls: vec![0.0, 1.0],
        lambda_disc: vec![0.0, 1.0],
    };
    assert_eq!(grid.expand().unwrap().len(), 3);
}
