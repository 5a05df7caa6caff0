//! Renders class-embedding interpolations of the reference generator: one row
//! per latent, moving from `class_a` to `class_b` in `steps` images.
//!
//! ```text
//! cargo run --release --example interpolate -- reference_root [class_a] [class_b] [steps]
//! ```

use candle_core::DType;
use distmorph::checkpoint::Checkpoint;
use distmorph::fsutil::read_json;
use distmorph::gan::{interpolate_classes, sample_latents, Generator};
use distmorph::grid::{render_rows, save_png};
use distmorph::reference::ReferenceArtifacts;
use rand::SeedableRng;

fn main() -> distmorph::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let root = std::path::PathBuf::from(args.first().expect("usage: interpolate reference_root [a] [b] [steps]"));
    let num = |i: usize, default: usize| args.get(i).map_or(default, |s| s.parse().expect("integer argument"));
    let (a, b, steps) = (num(1, 0), num(2, 5), num(3, 8));

    let refs: ReferenceArtifacts = read_json(&root.join("reference.json"))?;
    let g = Generator::from_checkpoint(&Checkpoint::load(&refs.generator)?, DType::F32, false)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let rows = (0..4)
        .map(|_| {
            let z = sample_latents(&mut rng, 1, g.spec.latent_dim, DType::F32)?;
            interpolate_classes(&g, &z, a, b, steps)
        })
        .collect::<distmorph::Result<Vec<_>>>()?;
    let path = root.join(format!("interpolation_{a}_{b}.png"));
    save_png(&render_rows(&rows, 4)?, &path)?;
    println!("{}", path.display());
    Ok(())
}
