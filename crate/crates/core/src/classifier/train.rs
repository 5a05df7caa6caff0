use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::negatives::check_shapes;
use super::{classify, BackboneSpec, Classifier, ClassifierMode, ClassifierSpec, FeatureOracle, OracleSpec};
use crate::checkpoint::{Checkpoint, Provenance};
use crate::data::{Batch, Dataset, EpochSampler};
use crate::error::{config, Error, Result};
use crate::nn;
use crate::seed;
use crate::tensor::to_f64_vec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    /// Steps of class-label pretraining of the backbone on dataset A.
    pub backbone_iterations: u64,
    /// Steps of binary fine-tuning.
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub holdout_fraction: f64,
    /// Below this held-out accuracy training is reported as failed.
    pub min_accuracy: f64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            backbone_iterations: 300,
            iterations: 400,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            holdout_fraction: 0.1,
            min_accuracy: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub mode: ClassifierMode,
    /// Contrastive: A-vs-B accuracy. Joint: positives-vs-negatives accuracy.
    pub heldout_accuracy: f64,
    pub heldout_mean_p1_a: f64,
    pub heldout_mean_p1_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout_mean_p1_negatives: Option<f64>,
    pub heldout_samples: usize,
    pub backbone_accuracy: f64,
}

pub struct TrainedClassifier {
    pub classifier: Classifier,
    pub checkpoint: Checkpoint,
    pub report: ClassifierReport,
}

fn adam(vars: Vec<candle_core::Var>, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?)
}

fn check_compatible(ds: &Dataset, backbone: &BackboneSpec) -> Result<()> {
    let (c, s, _) = ds.image_shape();
    if c != backbone.channels || s != backbone.image_size {
        return Err(config(format!(
            "dataset `{}` has images ({c}, {s}, {s}), backbone expects ({}, {2}, {2})",
            ds.id(),
            backbone.channels,
            backbone.image_size
        )));
    }
    Ok(())
}

/// Mean of `f(chunk)` rows over a dataset, in fixed-size chunks.
fn eval_chunks(ds: &Dataset, mut f: impl FnMut(&Batch) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ds.len());
    let positions: Vec<usize> = (0..ds.len()).collect();
    for chunk in positions.chunks(128) {
        out.extend(f(&ds.batch(chunk)?)?);
    }
    Ok(out)
}

fn p1_of(c: &Classifier, images: &Tensor) -> Result<Vec<f64>> {
    let probs = classify(c, images)?;
    to_f64_vec(&probs.narrow(1, 1, 1)?.squeeze(1)?)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn negatives_for(spec: &ClassifierSpec, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let neg = spec.negatives.expect("joint mode carries negatives");
    let (n, c, s) = (batch.labels.len(), spec.backbone.channels, spec.backbone.image_size);
    let flat = batch.images.flatten_all()?.to_vec1::<f32>()?;
    let dim = c * s * s;
    let mut out = Vec::with_capacity(flat.len());
    for i in 0..n {
        let img = &flat[i * dim..(i + 1) * dim];
        check_shapes(c, s, img.len())?;
        out.extend(neg.make(img, c, s, rng));
    }
    Ok(Tensor::from_vec(out, (n, c, s, s), &Device::Cpu)?)
}

/// Class-label pretraining shared by the classifier backbone and the oracle.
fn pretrain_backbone(
    params: &crate::params::ParamStore,
    logits: impl Fn(&Tensor) -> Result<Tensor>,
    a: &Dataset,
    cfg: &ClassifierTrainConfig,
    iterations: u64,
    stream: u64,
) -> Result<()> {
    if iterations == 0 {
        return Ok(());
    }
    let mut opt = adam(params.vars(), cfg.learning_rate)?;
    let mut sampler = EpochSampler::new(a, cfg.batch_size, seed::mix(cfg.seed, stream))?;
    for _ in 0..iterations {
        let b = sampler.next_batch()?;
        let loss = nn::cross_entropy(&logits(&b.images)?, &b.labels)?;
        opt.backward_step(&loss)?;
    }
    Ok(())
}

fn class_accuracy(holdout: &Dataset, probs: impl Fn(&Tensor) -> Result<Tensor>) -> Result<f64> {
    let labels = holdout.labels();
    let hits = eval_chunks(holdout, |b| {
        let p = probs(&b.images)?.argmax(1)?.to_vec1::<u32>()?;
        Ok(p.iter().zip(&b.labels).map(|(&p, &l)| f64::from(u8::from(p as usize == l))).collect())
    })?;
    debug_assert_eq!(hits.len(), labels.len());
    Ok(mean(&hits))
}

/// Trains the cross-dataset classifier: class-label pretraining of the backbone
/// on A's training split, then binary fine-tuning of the whole network. Held-out
/// metrics come from the reserved `holdout_fraction` of each dataset.
pub fn train_classifier(
    a: &Dataset,
    b: &Dataset,
    spec: &ClassifierSpec,
    cfg: &ClassifierTrainConfig,
) -> Result<TrainedClassifier> {
    spec.validate()?;
    check_compatible(a, &spec.backbone)?;
    check_compatible(b, &spec.backbone)?;
    if cfg.batch_size < 2 {
        return Err(config("classifier batch_size must be at least 2"));
    }
    let (a_train, a_hold) = a.split_holdout(cfg.holdout_fraction)?;
    let (b_train, b_hold) = b.split_holdout(cfg.holdout_fraction)?;
    let mut clf = Classifier::init(spec.clone(), a.class_count(), seed::mix(cfg.seed, 10), DType::F32, true)?;

    {
        let c = &clf;
        pretrain_backbone(&c.params, |x| c.class_logits(x), &a_train, cfg, cfg.backbone_iterations, 11)?;
    }
    let backbone_accuracy = if cfg.backbone_iterations > 0 {
        let c = &clf;
        class_accuracy(&a_hold, |x| Ok(candle_nn::ops::softmax(&c.class_logits(x)?, 1)?))?
    } else {
        0.0
    };
    clf.params.retain(|n| !n.starts_with("class_head"));

    let half = cfg.batch_size / 2;
    let mut opt = adam(clf.params.vars(), cfg.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(cfg.seed, 12));
    match spec.mode {
        ClassifierMode::Contrastive => {
            let mut sa = EpochSampler::new(&a_train, half, seed::mix(cfg.seed, 13))?;
            let mut sb = EpochSampler::new(&b_train, half, seed::mix(cfg.seed, 14))?;
            for _ in 0..cfg.iterations {
                let (ba, bb) = (sa.next_batch()?, sb.next_batch()?);
                let x = Tensor::cat(&[&ba.images, &bb.images], 0)?;
                let mut labels = vec![0usize; half];
                labels.extend(std::iter::repeat_n(1usize, half));
                let loss = nn::cross_entropy(&clf.logits(&x)?, &labels)?;
                opt.backward_step(&loss)?;
            }
        }
        ClassifierMode::Joint => {
            let quarter = (half / 2).max(1);
            let mut sa = EpochSampler::new(&a_train, quarter, seed::mix(cfg.seed, 13))?;
            let mut sb = EpochSampler::new(&b_train, quarter, seed::mix(cfg.seed, 14))?;
            let mut na = EpochSampler::new(&a_train, quarter, seed::mix(cfg.seed, 15))?;
            let mut nb = EpochSampler::new(&b_train, quarter, seed::mix(cfg.seed, 16))?;
            for _ in 0..cfg.iterations {
                let pos = Tensor::cat(&[&sa.next_batch()?.images, &sb.next_batch()?.images], 0)?;
                let src_a = na.next_batch()?;
                let src_b = nb.next_batch()?;
                let neg = Tensor::cat(
                    &[&negatives_for(spec, &src_a, &mut rng)?, &negatives_for(spec, &src_b, &mut rng)?],
                    0,
                )?;
                let x = Tensor::cat(&[&pos, &neg], 0)?;
                let mut labels = vec![1usize; 2 * quarter];
                labels.extend(std::iter::repeat_n(0usize, 2 * quarter));
                let loss = nn::cross_entropy(&clf.logits(&x)?, &labels)?;
                opt.backward_step(&loss)?;
            }
        }
    }

    // Held-out evaluation on frozen weights.
    let frozen = Classifier {
        spec: spec.clone(),
        params: clf.params.copy(false)?,
    };
    let p1_a = eval_chunks(&a_hold, |bt| p1_of(&frozen, &bt.images))?;
    let p1_b = eval_chunks(&b_hold, |bt| p1_of(&frozen, &bt.images))?;
    let (accuracy, p1_neg) = match spec.mode {
        ClassifierMode::Contrastive => {
            let correct = p1_a.iter().filter(|&&p| p < 0.5).count() + p1_b.iter().filter(|&&p| p > 0.5).count();
            (correct as f64 / (p1_a.len() + p1_b.len()) as f64, None)
        }
        ClassifierMode::Joint => {
            let mut neg_rng = ChaCha8Rng::seed_from_u64(seed::mix(cfg.seed, 17));
            let mut p1_n = Vec::new();
            for hold in [&a_hold, &b_hold] {
                p1_n.extend(eval_chunks(hold, |bt| {
                    p1_of(&frozen, &negatives_for(spec, bt, &mut neg_rng)?)
                })?);
            }
            let correct = p1_a.iter().chain(&p1_b).filter(|&&p| p > 0.5).count()
                + p1_n.iter().filter(|&&p| p < 0.5).count();
            let total = p1_a.len() + p1_b.len() + p1_n.len();
            (correct as f64 / total as f64, Some(mean(&p1_n)))
        }
    };
    let report = ClassifierReport {
        mode: spec.mode,
        heldout_accuracy: accuracy,
        heldout_mean_p1_a: mean(&p1_a),
        heldout_mean_p1_b: mean(&p1_b),
        heldout_mean_p1_negatives: p1_neg,
        heldout_samples: a_hold.len() + b_hold.len(),
        backbone_accuracy,
    };
    log::info!(
        "{} classifier: held-out accuracy {:.3}, P(1|A)={:.3}, P(1|B)={:.3}",
        spec.mode,
        report.heldout_accuracy,
        report.heldout_mean_p1_a,
        report.heldout_mean_p1_b
    );
    if report.heldout_accuracy < cfg.min_accuracy {
        return Err(Error::TrainingFailure {
            what: format!("{} classifier on ({}, {})", spec.mode, a.id(), b.id()),
            accuracy: report.heldout_accuracy,
            required: cfg.min_accuracy,
        });
    }
    let mut extra = serde_json::to_value(&report)?;
    extra["negative_strategy"] = serde_json::to_value(spec.negatives.map(|n| n.strategy))?;
    let checkpoint = frozen.to_checkpoint(Provenance {
        iterations: cfg.backbone_iterations + cfg.iterations,
        dataset_ids: vec![a.id().to_string(), b.id().to_string()],
        seed: cfg.seed,
        extra,
    })?;
    Ok(TrainedClassifier {
        classifier: frozen,
        checkpoint,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub heldout_class_accuracy: f64,
    pub heldout_samples: usize,
}

/// Trains the evaluation oracle on A's class labels. It shares no weights or
/// seeds with the guidance classifier.
pub fn train_feature_oracle(
    a: &Dataset,
    backbone: BackboneSpec,
    cfg: &ClassifierTrainConfig,
) -> Result<(FeatureOracle, Checkpoint, OracleReport)> {
    check_compatible(a, &backbone)?;
    let spec = OracleSpec {
        backbone,
        class_count: a.class_count(),
        dataset_id: a.id().to_string(),
    };
    let (train, hold) = a.split_holdout(cfg.holdout_fraction)?;
    let oracle = FeatureOracle::init(spec, seed::mix(cfg.seed, 20), DType::F32, true)?;
    let iterations = cfg.backbone_iterations + cfg.iterations;
    {
        let o = &oracle;
        pretrain_backbone(
            &o.params,
            |x| nn::linear(&o.params, "class_head", &o.features(x)?),
            &train,
            cfg,
            iterations,
            21,
        )?;
    }
    let frozen = FeatureOracle {
        spec: oracle.spec.clone(),
        params: oracle.params.copy(false)?,
    };
    let accuracy = class_accuracy(&hold, |x| frozen.class_probs(x))?;
    let report = OracleReport {
        heldout_class_accuracy: accuracy,
        heldout_samples: hold.len(),
    };
    if accuracy < cfg.min_accuracy {
        return Err(Error::TrainingFailure {
            what: format!("feature oracle on `{}`", a.id()),
            accuracy,
            required: cfg.min_accuracy,
        });
    }
    let ckpt = frozen.to_checkpoint(Provenance {
        iterations,
        dataset_ids: vec![a.id().to_string()],
        seed: cfg.seed,
        extra: serde_json::to_value(&report)?,
    })?;
    Ok((frozen, ckpt, report))
}

