use std::path::Path;

use candle_core::DType;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use chrono::Utc;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss, sample_classes, sample_latents, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use crate::checkpoint::{Checkpoint, Provenance};
use crate::data::{Dataset, EpochSampler};
use crate::error::{config, Error, Result};
use crate::fsutil::JsonlWriter;
use crate::seed;
use crate::tensor::scalar_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanTrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub log_every: u64,
    pub latent_dim: usize,
    pub class_embed_dim: usize,
    pub g_width: usize,
    pub d_width: usize,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 32,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            log_every: 50,
            latent_dim: 64,
            class_embed_dim: 16,
            g_width: 16,
            d_width: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanLogRecord {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub timestamp: String,
}

pub struct PretrainOutput {
    pub generator: Checkpoint,
    pub discriminator: Checkpoint,
    pub log: Vec<GanLogRecord>,
}

fn adam(vars: Vec<candle_core::Var>, lr: f64, cfg: &GanTrainConfig) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?)
}

/// Hinge-loss pretraining of the conditional GAN on dataset A. When `out_dir`
/// is given, the JSONL training log is streamed to `train_log.jsonl` there and
/// a diagnostic checkpoint pair is written if the losses stop being finite.
pub fn pretrain_gan(dataset: &Dataset, cfg: &GanTrainConfig, out_dir: Option<&Path>) -> Result<PretrainOutput> {
    if cfg.batch_size == 0 {
        return Err(config("batch_size must be positive"));
    }
    let (channels, size, _) = dataset.image_shape();
    let classes = dataset.class_count();
    let mut gspec = GeneratorSpec::new(classes, size, channels);
    gspec.latent_dim = cfg.latent_dim;
    gspec.class_embed_dim = cfg.class_embed_dim;
    gspec.width_multiplier = cfg.g_width;
    let mut dspec = DiscriminatorSpec::new(classes, size, channels);
    dspec.width_multiplier = cfg.d_width;

    let g = Generator::init(gspec, seed::mix(cfg.seed, 1), DType::F32, true)?;
    let d = Discriminator::init(dspec, seed::mix(cfg.seed, 2), DType::F32, true)?;
    let mut opt_g = adam(g.params.vars(), cfg.lr_g, cfg)?;
    let mut opt_d = adam(d.params.vars(), cfg.lr_d, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(cfg.seed, 3));
    let mut log = Vec::new();
    let mut writer = match out_dir {
        Some(dir) => Some(JsonlWriter::create(&dir.join("train_log.jsonl"))?),
        None => None,
    };
    let prov = |iterations| Provenance {
        iterations,
        dataset_ids: vec![dataset.id().to_string()],
        seed: cfg.seed,
        extra: serde_json::Value::Null,
    };

    let mut sampler = if cfg.iterations > 0 {
        Some(EpochSampler::new(dataset, cfg.batch_size, seed::mix(cfg.seed, 4))?)
    } else {
        None
    };
    for step in 1..=cfg.iterations {
        let batch = sampler.as_mut().expect("sampler exists when iterating").next_batch()?;
        let n = cfg.batch_size;

        let z = sample_latents(&mut rng, n, cfg.latent_dim, DType::F32)?;
        let y_fake = sample_classes(&mut rng, n, classes);
        let fake = g.forward(&z, &y_fake)?.detach();
        let loss_d = loss::discriminator_hinge(&d.score(&batch.images, &batch.labels)?, &d.score(&fake, &y_fake)?)?;
        let loss_d_val = scalar_f64(&loss_d)?;

        let z = sample_latents(&mut rng, n, cfg.latent_dim, DType::F32)?;
        let y = sample_classes(&mut rng, n, classes);
        let loss_g = loss::generator_hinge(&d.score(&g.forward(&z, &y)?, &y)?)?;
        let loss_g_val = scalar_f64(&loss_g)?;

        if !loss_d_val.is_finite() || !loss_g_val.is_finite() {
            let diagnostic = match out_dir {
                Some(dir) => {
                    let p = dir.join(format!("diagnostic_iter_{step}_generator.ckpt"));
                    g.to_checkpoint(prov(step))?.save(&p)?;
                    d.to_checkpoint(prov(step))?
                        .save(&dir.join(format!("diagnostic_iter_{step}_discriminator.ckpt")))?;
                    Some(p)
                }
                None => None,
            };
            return Err(Error::Diverged {
                iteration: step,
                what: format!("GAN loss (d={loss_d_val}, g={loss_g_val})"),
                diagnostic,
            });
        }
        opt_d.backward_step(&loss_d)?;
        let grads = loss_g.backward()?;
        opt_g.step(&grads)?;

        if step % cfg.log_every.max(1) == 0 || step == cfg.iterations {
            let rec = GanLogRecord {
                step,
                loss_d: loss_d_val,
                loss_g: loss_g_val,
                timestamp: Utc::now().to_rfc3339(),
            };
            if let Some(w) = writer.as_mut() {
                w.append(&rec)?;
            }
            log::debug!("pretrain step {step}: loss_d={loss_d_val:.4} loss_g={loss_g_val:.4}");
            log.push(rec);
        }
    }

    Ok(PretrainOutput {
        generator: g.to_checkpoint(prov(cfg.iterations))?,
        discriminator: d.to_checkpoint(prov(cfg.iterations))?,
        log,
    })
}
