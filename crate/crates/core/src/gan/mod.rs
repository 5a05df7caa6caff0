//! Class-conditional generator and projection discriminator standing in for the
//! pretrained GAN, plus hinge-loss pretraining and class interpolation.

pub mod loss;
mod pretrain;

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Architecture, Checkpoint, Provenance};
use crate::error::{contract, Result};
use crate::nn;
use crate::params::{Initializer, ParamStore};
use crate::tensor::check_image_batch;
pub use pretrain::{pretrain_gan, GanLogRecord, GanTrainConfig, PretrainOutput};

fn default_latent_dim() -> usize {
    64
}
fn default_class_embed_dim() -> usize {
    16
}
fn default_width() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    pub class_count: usize,
    #[serde(default = "default_class_embed_dim")]
    pub class_embed_dim: usize,
    pub image_size: usize,
    pub channels: usize,
    #[serde(default = "default_width")]
    pub width_multiplier: usize,
}

impl GeneratorSpec {
    pub fn new(class_count: usize, image_size: usize, channels: usize) -> Self {
        Self {
            latent_dim: default_latent_dim(),
            class_count,
            class_embed_dim: default_class_embed_dim(),
            image_size,
            channels,
            width_multiplier: default_width(),
        }
    }

    fn stages(&self) -> Result<usize> {
        upsampling_stages(self.image_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.stages()?;
        if self.latent_dim == 0 || self.class_count == 0 || self.class_embed_dim == 0 {
            return Err(contract("generator dims must be positive"));
        }
        if self.channels == 0 || self.width_multiplier == 0 {
            return Err(contract("generator channels and width must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub class_count: usize,
    pub image_size: usize,
    pub channels: usize,
    #[serde(default = "default_width")]
    pub width_multiplier: usize,
}

impl DiscriminatorSpec {
    pub fn new(class_count: usize, image_size: usize, channels: usize) -> Self {
        Self {
            class_count,
            image_size,
            channels,
            width_multiplier: default_width(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        upsampling_stages(self.image_size)?;
        if self.class_count == 0 || self.channels == 0 || self.width_multiplier == 0 {
            return Err(contract("discriminator dims must be positive"));
        }
        Ok(())
    }

    fn feature_dim(&self) -> usize {
        self.width_multiplier << upsampling_stages(self.image_size).unwrap_or(0)
    }
}

/// Number of 2x resolution changes between 4x4 and `image_size`.
pub(crate) fn upsampling_stages(image_size: usize) -> Result<usize> {
    match nn::log2_exact(image_size) {
        Some(l) if l >= 2 => Ok(l - 2),
        _ => Err(contract(format!("image_size {image_size} must be a power of two >= 4"))),
    }
}

/// Latent + class embedding -> 4x4 feature map -> transposed-conv upsampling -> tanh image.
#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub params: ParamStore,
}

impl Generator {
    pub fn init(spec: GeneratorSpec, seed: u64, dtype: DType, trainable: bool) -> Result<Self> {
        spec.validate()?;
        let stages = spec.stages()?;
        let base = spec.width_multiplier << stages;
        let mut init = Initializer::new(seed, dtype, trainable);
        let mut p = init.new_store();
        init.normal(&mut p, "embed", &[spec.class_count, spec.class_embed_dim], 1.0)?;
        let fan_in = spec.latent_dim + spec.class_embed_dim;
        init.kaiming(&mut p, "fc.weight", &[fan_in, base * 16], fan_in)?;
        init.zeros(&mut p, "fc.bias", &[base * 16])?;
        let mut ch = base;
        for i in 0..stages {
            init.kaiming(&mut p, &format!("up{i}.weight"), &[ch, ch / 2, 4, 4], ch * 4)?;
            init.zeros(&mut p, &format!("up{i}.bias"), &[ch / 2])?;
            ch /= 2;
        }
        init.normal(&mut p, "out.weight", &[spec.channels, ch, 3, 3], (1.0 / (ch * 9) as f64).sqrt())?;
        init.zeros(&mut p, "out.bias", &[spec.channels])?;
        Ok(Self { spec, params: p })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, dtype: DType, trainable: bool) -> Result<Self> {
        match &ckpt.architecture {
            Architecture::Generator(spec) => Ok(Self {
                spec: spec.clone(),
                params: ckpt.to_store(dtype, trainable)?,
            }),
            other => Err(contract(format!("expected a generator checkpoint, found {}", other.kind()))),
        }
    }

    pub fn to_checkpoint(&self, prov: Provenance) -> Result<Checkpoint> {
        Checkpoint::from_store(Architecture::Generator(self.spec.clone()), &self.params, prov)
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// Class embedding rows for `y`.
    pub fn embed(&self, y: &[usize]) -> Result<Tensor> {
        if let Some(bad) = y.iter().find(|&&c| c >= self.spec.class_count) {
            return Err(contract(format!(
                "class index {bad} out of range for {} classes",
                self.spec.class_count
            )));
        }
        nn::embedding(&self.params, "embed", y)
    }

    pub fn forward(&self, z: &Tensor, y: &[usize]) -> Result<Tensor> {
        self.check_latents(z, y.len())?;
        let e = self.embed(y)?;
        self.forward_embedded(z, &e)
    }

    /// Forward pass from an explicit conditioning vector per sample.
    pub fn forward_embedded(&self, z: &Tensor, e: &Tensor) -> Result<Tensor> {
        let n = z.dim(0)?;
        if e.dims() != [n, self.spec.class_embed_dim] {
            return Err(contract(format!(
                "embedding batch {:?} does not match ({n}, {})",
                e.dims(),
                self.spec.class_embed_dim
            )));
        }
        let stages = self.spec.stages()?;
        let base = self.spec.width_multiplier << stages;
        let h = Tensor::cat(&[z, e], 1)?;
        let mut h = nn::linear(&self.params, "fc", &h)?.relu()?.reshape((n, base, 4, 4))?;
        for i in 0..stages {
            h = nn::conv_transpose2d(&self.params, &format!("up{i}"), &h, 2, 1)?.relu()?;
        }
        Ok(nn::conv2d(&self.params, "out", &h, 1, 1)?.tanh()?)
    }

    fn check_latents(&self, z: &Tensor, n: usize) -> Result<()> {
        match z.dims() {
            [m, d] if *m == n && *d == self.spec.latent_dim => Ok(()),
            dims => Err(contract(format!(
                "latent batch {dims:?} does not match ({n}, {}) for {n} class labels",
                self.spec.latent_dim
            ))),
        }
    }
}

/// Convolutional feature extractor with a projection head: one realism score per
/// sample, higher meaning more real.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    pub params: ParamStore,
}

impl Discriminator {
    pub fn init(spec: DiscriminatorSpec, seed: u64, dtype: DType, trainable: bool) -> Result<Self> {
        spec.validate()?;
        let stages = upsampling_stages(spec.image_size)?;
        let w = spec.width_multiplier;
        let mut init = Initializer::new(seed, dtype, trainable);
        let mut p = init.new_store();
        init.kaiming(&mut p, "in.weight", &[w, spec.channels, 3, 3], spec.channels * 9)?;
        init.zeros(&mut p, "in.bias", &[w])?;
        let mut ch = w;
        for i in 0..stages {
            init.kaiming(&mut p, &format!("down{i}.weight"), &[ch * 2, ch, 4, 4], ch * 16)?;
            init.zeros(&mut p, &format!("down{i}.bias"), &[ch * 2])?;
            ch *= 2;
        }
        let f = spec.feature_dim();
        let head_std = 1.0 / (16.0 * f as f64).sqrt();
        init.normal(&mut p, "out.weight", &[f, 1], head_std)?;
        init.zeros(&mut p, "out.bias", &[1])?;
        init.normal(&mut p, "embed", &[spec.class_count, f], head_std)?;
        Ok(Self { spec, params: p })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, dtype: DType, trainable: bool) -> Result<Self> {
        match &ckpt.architecture {
            Architecture::Discriminator(spec) => Ok(Self {
                spec: spec.clone(),
                params: ckpt.to_store(dtype, trainable)?,
            }),
            other => Err(contract(format!("expected a discriminator checkpoint, found {}", other.kind()))),
        }
    }

    pub fn to_checkpoint(&self, prov: Provenance) -> Result<Checkpoint> {
        Checkpoint::from_store(Architecture::Discriminator(self.spec.clone()), &self.params, prov)
    }

    /// Raw scores, shape `(n,)`.
    pub fn score(&self, images: &Tensor, y: &[usize]) -> Result<Tensor> {
        let n = check_image_batch(images, self.spec.channels, self.spec.image_size, "discriminator input")?;
        if y.len() != n {
            return Err(contract(format!("{n} images but {} class labels", y.len())));
        }
        if let Some(bad) = y.iter().find(|&&c| c >= self.spec.class_count) {
            return Err(contract(format!("class index {bad} out of range")));
        }
        let stages = upsampling_stages(self.spec.image_size)?;
        let mut h = nn::leaky_relu(&nn::conv2d(&self.params, "in", images, 1, 1)?)?;
        for i in 0..stages {
            h = nn::leaky_relu(&nn::conv2d(&self.params, &format!("down{i}"), &h, 2, 1)?)?;
        }
        let feats = h.sum((2, 3))?;
        let uncond = nn::linear(&self.params, "out", &feats)?.squeeze(1)?;
        let proj = (nn::embedding(&self.params, "embed", y)? * &feats)?.sum(D::Minus1)?;
        Ok((uncond + proj)?)
    }
}

/// Samples a generator batch; a pure function of `(g, z, y)`.
pub fn generate(g: &Generator, z: &Tensor, y: &[usize]) -> Result<Tensor> {
    g.forward(z, y)
}

pub fn discriminator_score(d: &Discriminator, images: &Tensor, y: &[usize]) -> Result<Tensor> {
    d.score(images, y)
}

/// One row of `steps` images for a shared latent `z` (shape `(1, latent)` or
/// `(latent,)`), with the class embedding moved linearly from `class_a` to
/// `class_b`. Each image is rendered as its own batch of one so the endpoints
/// match `generate(g, z, [class_a])` and `generate(g, z, [class_b])` bit for bit.
pub fn interpolate_classes(g: &Generator, z: &Tensor, class_a: usize, class_b: usize, steps: usize) -> Result<Tensor> {
    if steps < 2 {
        return Err(contract(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    let z = match z.rank() {
        1 => z.unsqueeze(0)?,
        _ => z.clone(),
    };
    g.check_latents(&z, 1)?;
    let ea = g.embed(&[class_a])?;
    let eb = g.embed(&[class_b])?;
    let mut row = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 / (steps - 1) as f64;
        let e = ((&ea * (1.0 - t))? + (&eb * t)?)?;
        row.push(g.forward_embedded(&z, &e)?);
    }
    Ok(Tensor::cat(&row, 0)?)
}

/// Standard-normal latents from a seeded generator.
pub fn sample_latents(rng: &mut impl rand::Rng, n: usize, dim: usize, dtype: DType) -> Result<Tensor> {
    use rand_distr::{Distribution, StandardNormal};
    let data: Vec<f32> = (0..n * dim).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(data, (n, dim), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

pub fn sample_classes(rng: &mut impl rand::Rng, n: usize, class_count: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..class_count)).collect()
}
