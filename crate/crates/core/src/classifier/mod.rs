//! Cross-dataset classifier in contrastive and joint modes, its frozen
//! inference, the guidance loss used during morphing, and the separately
//! trained feature oracle used only for evaluation.

pub mod negatives;
mod train;

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Architecture, Checkpoint, Provenance};
use crate::error::{contract, Result};
use crate::gan::upsampling_stages;
use crate::nn;
use crate::params::{Initializer, ParamStore};
use crate::tensor::check_image_batch;
pub use negatives::{NegativeSampleSpec, NegativeStrategy};
pub use train::{
    train_classifier, train_feature_oracle, ClassifierReport, ClassifierTrainConfig, OracleReport, TrainedClassifier,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    /// A is class 0, B is class 1.
    Contrastive,
    /// A and B together are class 1, constructed negatives are class 0.
    Joint,
}

impl std::str::FromStr for ClassifierMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "contrastive" => Ok(Self::Contrastive),
            "joint" => Ok(Self::Joint),
            other => Err(format!("unknown classifier mode `{other}` (expected contrastive|joint)")),
        }
    }
}

impl std::fmt::Display for ClassifierMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Contrastive => "contrastive",
            Self::Joint => "joint",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub image_size: usize,
    pub channels: usize,
    pub width: usize,
}

impl BackboneSpec {
    pub fn feature_dim(&self) -> usize {
        self.width << upsampling_stages(self.image_size).unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        upsampling_stages(self.image_size)?;
        if self.channels == 0 || self.width == 0 {
            return Err(contract("backbone channels and width must be positive"));
        }
        Ok(())
    }
}

/// Index of the class whose probability morphing maximizes.
pub const TARGET_CLASS: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub mode: ClassifierMode,
    pub backbone: BackboneSpec,
    pub dataset_a_id: String,
    pub dataset_b_id: String,
    pub target_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negatives: Option<NegativeSampleSpec>,
}

impl ClassifierSpec {
    pub fn contrastive(a: &str, b: &str, backbone: BackboneSpec) -> Self {
        Self {
            mode: ClassifierMode::Contrastive,
            backbone,
            dataset_a_id: a.into(),
            dataset_b_id: b.into(),
            target_class: TARGET_CLASS,
            negatives: None,
        }
    }

    pub fn joint(a: &str, b: &str, backbone: BackboneSpec, negatives: NegativeSampleSpec) -> Self {
        Self {
            mode: ClassifierMode::Joint,
            backbone,
            dataset_a_id: a.into(),
            dataset_b_id: b.into(),
            target_class: TARGET_CLASS,
            negatives: Some(negatives),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.target_class != TARGET_CLASS {
            return Err(contract(format!(
                "{} classifiers target class {TARGET_CLASS}, spec says {}",
                self.mode, self.target_class
            )));
        }
        match (self.mode, &self.negatives) {
            (ClassifierMode::Joint, None) => Err(contract("joint mode needs a negative sample spec")),
            (ClassifierMode::Contrastive, Some(_)) => Err(contract("contrastive mode takes no negatives")),
            (_, Some(n)) => n.validate(self.backbone.image_size),
            _ => Ok(()),
        }
    }
}

/// Evaluation-only class-label classifier over dataset A.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub backbone: BackboneSpec,
    pub class_count: usize,
    pub dataset_id: String,
}

fn init_backbone(init: &mut Initializer, p: &mut ParamStore, spec: &BackboneSpec) -> Result<()> {
    let stages = upsampling_stages(spec.image_size)?;
    init.kaiming(p, "backbone.in.weight", &[spec.width, spec.channels, 3, 3], spec.channels * 9)?;
    init.zeros(p, "backbone.in.bias", &[spec.width])?;
    let mut ch = spec.width;
    for i in 0..stages {
        init.kaiming(p, &format!("backbone.down{i}.weight"), &[ch * 2, ch, 4, 4], ch * 16)?;
        init.zeros(p, &format!("backbone.down{i}.bias"), &[ch * 2])?;
        ch *= 2;
    }
    Ok(())
}

fn init_head(init: &mut Initializer, p: &mut ParamStore, name: &str, fin: usize, fout: usize) -> Result<()> {
    init.normal(p, &format!("{name}.weight"), &[fin, fout], (1.0 / fin as f64).sqrt())?;
    init.zeros(p, &format!("{name}.bias"), &[fout])
}

/// Conv stack with global average pooling, shared by classifier and oracle.
fn backbone_features(p: &ParamStore, spec: &BackboneSpec, images: &Tensor) -> Result<Tensor> {
    check_image_batch(images, spec.channels, spec.image_size, "classifier input")?;
    let stages = upsampling_stages(spec.image_size)?;
    let mut h = nn::leaky_relu(&nn::conv2d(p, "backbone.in", images, 1, 1)?)?;
    for i in 0..stages {
        h = nn::leaky_relu(&nn::conv2d(p, &format!("backbone.down{i}"), &h, 2, 1)?)?;
    }
    Ok(h.mean((2, 3))?)
}

#[derive(Debug, Clone)]
pub struct Classifier {
    pub spec: ClassifierSpec,
    pub params: ParamStore,
}

impl Classifier {
    /// Fresh backbone, binary head, and an auxiliary class head for backbone pretraining.
    pub fn init(spec: ClassifierSpec, class_count: usize, seed: u64, dtype: DType, trainable: bool) -> Result<Self> {
        spec.validate()?;
        let mut init = Initializer::new(seed, dtype, trainable);
        let mut p = init.new_store();
        init_backbone(&mut init, &mut p, &spec.backbone)?;
        let f = spec.backbone.feature_dim();
        init_head(&mut init, &mut p, "head", f, 2)?;
        if class_count > 0 {
            init_head(&mut init, &mut p, "class_head", f, class_count)?;
        }
        Ok(Self { spec, params: p })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, dtype: DType, trainable: bool) -> Result<Self> {
        match &ckpt.architecture {
            Architecture::Classifier(spec) => Ok(Self {
                spec: spec.clone(),
                params: ckpt.to_store(dtype, trainable)?,
            }),
            other => Err(contract(format!("expected a classifier checkpoint, found {}", other.kind()))),
        }
    }

    pub fn to_checkpoint(&self, prov: Provenance) -> Result<Checkpoint> {
        Checkpoint::from_store(Architecture::Classifier(self.spec.clone()), &self.params, prov)
    }

    pub fn features(&self, images: &Tensor) -> Result<Tensor> {
        backbone_features(&self.params, &self.spec.backbone, images)
    }

    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        nn::linear(&self.params, "head", &self.features(images)?)
    }

    pub(crate) fn class_logits(&self, images: &Tensor) -> Result<Tensor> {
        nn::linear(&self.params, "class_head", &self.features(images)?)
    }
}

/// Per-sample softmax over the two classes, shape `(n, 2)`.
pub fn classify(c: &Classifier, images: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(&c.logits(images)?, D::Minus1)?)
}

/// Mean cross-entropy of the classifier's prediction against the constant
/// label `target_class`; differentiable with respect to `images`.
pub fn classifier_guidance_loss(c: &Classifier, images: &Tensor, target_class: usize) -> Result<Tensor> {
    if target_class != c.spec.target_class {
        return Err(contract(format!(
            "guidance target {target_class} differs from the classifier's target {}",
            c.spec.target_class
        )));
    }
    guidance_loss_from_logits(&c.logits(images)?, target_class)
}

pub fn guidance_loss_from_logits(logits: &Tensor, target_class: usize) -> Result<Tensor> {
    let n = logits.dim(0)?;
    nn::cross_entropy(logits, &vec![target_class; n])
}

#[derive(Debug, Clone)]
pub struct FeatureOracle {
    pub spec: OracleSpec,
    pub params: ParamStore,
}

impl FeatureOracle {
    pub fn init(spec: OracleSpec, seed: u64, dtype: DType, trainable: bool) -> Result<Self> {
        spec.backbone.validate()?;
        let mut init = Initializer::new(seed, dtype, trainable);
        let mut p = init.new_store();
        init_backbone(&mut init, &mut p, &spec.backbone)?;
        init_head(&mut init, &mut p, "class_head", spec.backbone.feature_dim(), spec.class_count)?;
        Ok(Self { spec, params: p })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        match &ckpt.architecture {
            Architecture::FeatureOracle(spec) => Ok(Self {
                spec: spec.clone(),
                params: ckpt.to_store(DType::F32, false)?,
            }),
            other => Err(contract(format!("expected a feature-oracle checkpoint, found {}", other.kind()))),
        }
    }

    pub fn to_checkpoint(&self, prov: Provenance) -> Result<Checkpoint> {
        Checkpoint::from_store(Architecture::FeatureOracle(self.spec.clone()), &self.params, prov)
    }

    /// Penultimate (pooled) features.
    pub fn features(&self, images: &Tensor) -> Result<Tensor> {
        backbone_features(&self.params, &self.spec.backbone, images)
    }

    pub fn class_probs(&self, images: &Tensor) -> Result<Tensor> {
        let logits = nn::linear(&self.params, "class_head", &self.features(images)?)?;
        Ok(candle_nn::ops::softmax(&logits, D::Minus1)?)
    }
}
