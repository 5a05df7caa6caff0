//! Runs one fine-tuning job over a reference directory built by the
//! `reference_pipeline` example and prints the snapshot evaluations.
//!
//! ```text
//! cargo run --release --example morph_run -- /tmp/distmorph-ref [contrastive|joint] [max_iterations] [learning_rate]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use distmorph::fsutil::read_json;
use distmorph::metrics::EvalReport;
use distmorph::morph::{run_morph, NoSteering, RunLayout};
use distmorph::reference::ReferenceArtifacts;

fn main() -> distmorph::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let root = args.first().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("distmorph-ref"));
    let refs: ReferenceArtifacts = read_json(&root.join("reference.json"))?;
    let mode = args.get(1).map(String::as_str).unwrap_or("contrastive");
    let mut cfg = match mode {
        "joint" => refs.joint_morph_config("example-joint"),
        _ => refs.morph_config("example-contrastive"),
    };
    if let Some(n) = args.get(2) {
        cfg.max_iterations = n.parse().expect("max_iterations must be an integer");
        cfg.snapshot_at.retain(|&k| k <= cfg.max_iterations);
    }
    if let Some(lr) = args.get(3) {
        cfg.learning_rate = lr.parse().expect("learning_rate must be a number");
    }

    let runs = root.join("runs");
    let start = Instant::now();
    let artifacts = run_morph(&cfg, &runs, &mut NoSteering)?;
    println!(
        "{} iterations in {:.1}s -> {}",
        artifacts.final_iteration,
        start.elapsed().as_secs_f64(),
        artifacts.run_dir.display()
    );
    let layout = RunLayout::new(&runs, &cfg.run_id);
    for k in std::iter::once(0).chain(layout.snapshot_iterations()) {
        if let Ok(r) = read_json::<EvalReport>(&layout.eval_report(k)) {
            println!(
                "iter {:>5}  target_prob {:.3}  disc_score {:.3}  diversity_pixel {:.3}  diversity_feature {:.3}",
                r.iteration, r.mean_target_prob, r.mean_disc_score, r.diversity_pixel, r.diversity_feature
            );
        }
    }
    Ok(())
}
