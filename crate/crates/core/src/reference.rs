//! The desk-scale reference setup: a synthetic shapes base split into a
//! recolored stand-in pair, a small conditional GAN pretrained on A, both
//! cross-dataset classifiers, and the evaluation oracle.
//!
//! [`ensure_reference`] builds everything into a directory once and reuses it
//! afterwards as long as the stored [`ReferenceConfig`] matches.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{
    train_classifier, train_feature_oracle, BackboneSpec, ClassifierReport, ClassifierSpec, ClassifierTrainConfig,
    NegativeSampleSpec, OracleReport,
};
use crate::data::{load_dataset, make_stand_in_pair, write_manifest, DatasetSpec, StandInStyle};
use crate::error::Result;
use crate::fsutil::{read_json, write_json_atomic};
use crate::gan::{pretrain_gan, GanTrainConfig};
use crate::morph::MorphRunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub seed: u64,
    pub image_size: usize,
    pub channels: usize,
    pub base_samples: usize,
    pub style: StandInStyle,
    pub backbone_width: usize,
    pub gan: GanTrainConfig,
    pub classifier: ClassifierTrainConfig,
    pub oracle: ClassifierTrainConfig,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        let seed = 7;
        Self {
            seed,
            image_size: 16,
            channels: 3,
            base_samples: 4000,
            style: StandInStyle::Recolor,
            backbone_width: 8,
            gan: GanTrainConfig {
                iterations: 3000,
                batch_size: 32,
                seed,
                log_every: 50,
                latent_dim: 32,
                class_embed_dim: 16,
                g_width: 16,
                d_width: 16,
                ..GanTrainConfig::default()
            },
            classifier: ClassifierTrainConfig {
                backbone_iterations: 300,
                iterations: 2500,
                seed,
                ..ClassifierTrainConfig::default()
            },
            oracle: ClassifierTrainConfig {
                backbone_iterations: 600,
                iterations: 0,
                seed: seed ^ 0x5eed,
                ..ClassifierTrainConfig::default()
            },
        }
    }
}

impl ReferenceConfig {
    pub fn base_spec(&self) -> DatasetSpec {
        DatasetSpec::synthetic_shapes("shapes", self.image_size, self.channels, self.seed).with_samples(self.base_samples)
    }

    pub fn backbone(&self) -> BackboneSpec {
        BackboneSpec {
            image_size: self.image_size,
            channels: self.channels,
            width: self.backbone_width,
        }
    }
}

/// Paths and training reports of a built reference directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceArtifacts {
    pub root: PathBuf,
    pub config: ReferenceConfig,
    pub dataset_a: PathBuf,
    pub dataset_b: PathBuf,
    pub generator: PathBuf,
    pub discriminator: PathBuf,
    pub contrastive: PathBuf,
    pub joint: PathBuf,
    pub oracle: PathBuf,
    pub contrastive_report: ClassifierReport,
    pub joint_report: ClassifierReport,
    pub oracle_report: OracleReport,
}

impl ReferenceArtifacts {
    /// A morph config over the reference networks with the contrastive
    /// classifier and the oracle attached for snapshot evaluation.
    pub fn morph_config(&self, run_id: &str) -> MorphRunConfig {
        let mut cfg = MorphRunConfig::new(run_id, &self.generator, &self.discriminator, &self.contrastive);
        cfg.eval_oracle_ckpt = Some(self.oracle.clone());
        cfg.seed = self.config.seed;
        cfg
    }

    /// Same as [`Self::morph_config`] but guided by the joint classifier.
    pub fn joint_morph_config(&self, run_id: &str) -> MorphRunConfig {
        let mut cfg = self.morph_config(run_id);
        cfg.classifier_ckpt = self.joint.clone();
        cfg
    }
}

const INDEX: &str = "reference.json";

/// Builds every reference artifact under `root`, overwriting what is there.
pub fn build_reference(root: &Path, cfg: &ReferenceConfig) -> Result<ReferenceArtifacts> {
    std::fs::create_dir_all(root.join("data"))?;
    std::fs::create_dir_all(root.join("gan"))?;
    std::fs::create_dir_all(root.join("classifier"))?;

    let (spec_a, spec_b) = make_stand_in_pair(cfg.style, &cfg.base_spec())?;
    let a = load_dataset(&spec_a)?;
    let b = load_dataset(&spec_b)?;
    let dataset_a = root.join("data/a.json");
    let dataset_b = root.join("data/b.json");
    write_manifest(&a, &dataset_a)?;
    write_manifest(&b, &dataset_b)?;
    log::info!("reference data: {} ({}), {} ({})", a.id(), a.len(), b.id(), b.len());

    let gan = pretrain_gan(&a, &cfg.gan, Some(&root.join("gan")))?;
    let generator = root.join("gan/generator.ckpt");
    let discriminator = root.join("gan/discriminator.ckpt");
    gan.generator.save(&generator)?;
    gan.discriminator.save(&discriminator)?;
    log::info!("reference gan pretrained for {} iterations", cfg.gan.iterations);

    let contrastive_run = train_classifier(
        &a,
        &b,
        &ClassifierSpec::contrastive(a.id(), b.id(), cfg.backbone()),
        &cfg.classifier,
    )?;
    let contrastive = root.join("classifier/contrastive.ckpt");
    contrastive_run.checkpoint.save(&contrastive)?;

    let joint_run = train_classifier(
        &a,
        &b,
        &ClassifierSpec::joint(a.id(), b.id(), cfg.backbone(), NegativeSampleSpec::default()),
        &cfg.classifier,
    )?;
    let joint = root.join("classifier/joint.ckpt");
    joint_run.checkpoint.save(&joint)?;

    let (_, oracle_ckpt, oracle_report) = train_feature_oracle(&a, cfg.backbone(), &cfg.oracle)?;
    let oracle = root.join("classifier/oracle.ckpt");
    oracle_ckpt.save(&oracle)?;

    let artifacts = ReferenceArtifacts {
        root: root.to_path_buf(),
        config: cfg.clone(),
        dataset_a,
        dataset_b,
        generator,
        discriminator,
        contrastive,
        joint,
        oracle,
        contrastive_report: contrastive_run.report,
        joint_report: joint_run.report,
        oracle_report,
    };
    write_json_atomic(&root.join(INDEX), &artifacts)?;
    Ok(artifacts)
}

/// Loads the reference directory if it was built with `cfg`, building it otherwise.
pub fn ensure_reference(root: &Path, cfg: &ReferenceConfig) -> Result<ReferenceArtifacts> {
    if let Ok(existing) = read_json::<ReferenceArtifacts>(&root.join(INDEX)) {
        let complete = [
            &existing.generator,
            &existing.discriminator,
            &existing.contrastive,
            &existing.joint,
            &existing.oracle,
        ]
        .iter()
        .all(|p| p.exists());
        if existing.config == *cfg && complete {
            return Ok(existing);
        }
    }
    build_reference(root, cfg)
}
