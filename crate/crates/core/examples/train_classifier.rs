//! Trains a contrastive or joint cross-dataset classifier on the reference
//! stand-in pair and prints the held-out report.
//!
//! ```text
//! cargo run --release --example train_classifier -- joint [iterations] [backbone_iterations]
//! ```

use distmorph::classifier::{train_classifier, ClassifierMode, ClassifierSpec, NegativeSampleSpec};
use distmorph::data::{load_dataset, make_stand_in_pair};
use distmorph::reference::ReferenceConfig;

fn main() -> distmorph::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode: ClassifierMode = match args.first() {
        Some(s) => s.parse().expect("mode is contrastive or joint"),
        None => ClassifierMode::Contrastive,
    };
    let mut cfg = ReferenceConfig::default();
    if let Some(n) = args.get(1) {
        cfg.classifier.iterations = n.parse().expect("iterations must be an integer");
    }
    if let Some(n) = args.get(2) {
        cfg.classifier.backbone_iterations = n.parse().expect("backbone_iterations must be an integer");
    }

    let (spec_a, spec_b) = make_stand_in_pair(cfg.style, &cfg.base_spec())?;
    let a = load_dataset(&spec_a)?;
    let b = load_dataset(&spec_b)?;
    let spec = match mode {
        ClassifierMode::Contrastive => ClassifierSpec::contrastive(a.id(), b.id(), cfg.backbone()),
        ClassifierMode::Joint => ClassifierSpec::joint(a.id(), b.id(), cfg.backbone(), NegativeSampleSpec::default()),
    };
    let trained = train_classifier(&a, &b, &spec, &cfg.classifier)?;
    println!("{}", serde_json::to_string_pretty(&trained.report)?);
    Ok(())
}
