//! Pretrains a small conditional GAN on synthetic shapes, then writes the
//! checkpoints and a 10x2 sample sheet (two samples per class).
//!
//! ```text
//! cargo run --release --example pretrain_gan -- out_dir [iterations]
//! ```

use std::path::PathBuf;

use candle_core::DType;
use distmorph::data::{load_dataset, DatasetSpec};
use distmorph::gan::{pretrain_gan, GanTrainConfig, Generator};
use distmorph::grid::{render_grid, save_png};
use distmorph::metrics::{eval_latents, EvalConfig};

fn main() -> distmorph::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "gan-demo".into()));
    let iterations: u64 = args.next().map_or(600, |s| s.parse().expect("iterations must be an integer"));

    let data = load_dataset(&DatasetSpec::synthetic_shapes("shapes", 16, 3, 1).with_samples(2000))?;
    let cfg = GanTrainConfig {
        iterations,
        latent_dim: 32,
        seed: 1,
        ..GanTrainConfig::default()
    };
    let trained = pretrain_gan(&data, &cfg, Some(&out))?;
    trained.generator.save(&out.join("generator.ckpt"))?;
    trained.discriminator.save(&out.join("discriminator.ckpt"))?;

    let g = Generator::from_checkpoint(&trained.generator, DType::F32, false)?;
    let (z, y) = eval_latents(&g, &EvalConfig { samples: 20, ..EvalConfig::default() })?;
    save_png(&render_grid(&g.forward(&z, &y)?, 10, 3)?, &out.join("samples.png"))?;
    for r in trained.log.iter().step_by(4) {
        println!("step {:>5}  loss_d {:.3}  loss_g {:.3}", r.step, r.loss_d, r.loss_g);
    }
    println!("{}", out.display());
    Ok(())
}
