//! Evaluates every snapshot of two finished runs with the reference oracle and
//! prints a joint-vs-contrastive comparison at the iterations both share.
//!
//! ```text
//! cargo run --release --example evaluate -- reference_root runs_dir joint_run contrastive_run
//! ```

use std::path::PathBuf;

use candle_core::DType;
use distmorph::checkpoint::Checkpoint;
use distmorph::classifier::{Classifier, FeatureOracle};
use distmorph::fsutil::read_json;
use distmorph::gan::Discriminator;
use distmorph::metrics::{compare_modes, evaluate_snapshot_file, EvalConfig, EvalReport};
use distmorph::morph::{MorphRunConfig, RunLayout};
use distmorph::reference::ReferenceArtifacts;

fn evaluate_run(runs: &std::path::Path, id: &str, oracle: &FeatureOracle) -> distmorph::Result<Vec<EvalReport>> {
    let layout = RunLayout::new(runs, id);
    let cfg: MorphRunConfig = read_json(&layout.config())?;
    let c = Classifier::from_checkpoint(&Checkpoint::load(&cfg.classifier_ckpt)?, DType::F32, false)?;
    let d = Discriminator::from_checkpoint(&Checkpoint::load(&cfg.discriminator_ckpt)?, DType::F32, false)?;
    layout
        .snapshot_iterations()
        .into_iter()
        .map(|k| evaluate_snapshot_file(&layout.snapshot(k), &c, &d, oracle, &EvalConfig::default(), id))
        .collect()
}

fn main() -> distmorph::Result<()> {
    let args: Vec<PathBuf> = std::env::args_os().skip(1).map(PathBuf::from).collect();
    let [root, runs, joint, contrastive] = args.as_slice() else {
        panic!("usage: evaluate reference_root runs_dir joint_run contrastive_run");
    };
    let refs: ReferenceArtifacts = read_json(&root.join("reference.json"))?;
    let oracle = FeatureOracle::from_checkpoint(&Checkpoint::load(&refs.oracle)?)?;
    let joint = evaluate_run(runs, joint.to_str().expect("utf-8 run id"), &oracle)?;
    let contrastive = evaluate_run(runs, contrastive.to_str().expect("utf-8 run id"), &oracle)?;
    for j in &joint {
        let Some(c) = contrastive.iter().find(|c| c.iteration == j.iteration) else {
            continue;
        };
        let s = compare_modes(j, c)?;
        println!(
            "iter {:>5}  target {:+.3}  realism {:+.3}  diversity_pixel {:+.3}  diversity_feature {:+.3}",
            s.iteration,
            s.deltas["mean_target_prob"],
            s.deltas["mean_disc_score"],
            s.deltas["diversity_pixel"],
            s.deltas["diversity_feature"]
        );
    }
    Ok(())
}
