//! Builds the full desk-scale reference setup (stand-in pair, pretrained GAN,
//! both classifiers, oracle) into a directory and prints the training reports.
//!
//! ```text
//! cargo run --release --example reference_pipeline -- /tmp/distmorph-ref [gan_iterations]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use distmorph::reference::{build_reference, ReferenceConfig};

fn main() -> distmorph::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let root = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("distmorph-ref"));
    let mut cfg = ReferenceConfig::default();
    if let Some(n) = args.next() {
        cfg.gan.iterations = n.parse().expect("gan_iterations must be an integer");
    }
    let start = Instant::now();
    let refs = build_reference(&root, &cfg)?;
    println!("built in {:.1}s under {}", start.elapsed().as_secs_f64(), root.display());
    println!("contrastive: {}", serde_json::to_string(&refs.contrastive_report)?);
    println!("joint:       {}", serde_json::to_string(&refs.joint_report)?);
    println!("oracle:      {}", serde_json::to_string(&refs.oracle_report)?);
    Ok(())
}
