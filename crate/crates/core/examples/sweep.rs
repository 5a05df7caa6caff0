//! Runs the 4x4 lambda preset on the reference setup and prints the final
//! target probability and realism of every grid point.
//!
//! ```text
//! cargo run --release --example sweep -- reference_root [iterations] [parallel]
//! ```

use std::path::PathBuf;

use distmorph::fsutil::read_json;
use distmorph::morph::{run_sweep, SweepGrid, SWEEP_PRESET};
use distmorph::reference::ReferenceArtifacts;

fn main() -> distmorph::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().expect("usage: sweep reference_root [iterations] [parallel]"));
    let iterations: u64 = args.next().map_or(150, |s| s.parse().expect("iterations"));
    let parallel: usize = args.next().map_or(2, |s| s.parse().expect("parallel"));

    let refs: ReferenceArtifacts = read_json(&root.join("reference.json"))?;
    let mut base = refs.morph_config("sweep");
    base.eval_oracle_ckpt = None;
    base.max_iterations = iterations;
    base.snapshot_at = vec![];
    let grid = SweepGrid {
        base,
        lambda_cls: SWEEP_PRESET.to_vec(),
        lambda_disc: SWEEP_PRESET.to_vec(),
    };
    let (index, dir) = run_sweep(&grid, &root.join("runs"), parallel)?;
    println!("{:>6} {:>6} {:>8} {:>8}", "l_cls", "l_disc", "target", "realism");
    for e in &index.entries {
        println!(
            "{:>6} {:>6} {:>8.3} {:>8.3}",
            e.lambda_cls,
            e.lambda_disc,
            e.final_mean_target_prob.unwrap_or(f64::NAN),
            e.final_mean_disc_score.unwrap_or(f64::NAN)
        );
    }
    println!("{}", dir.display());
    Ok(())
}
