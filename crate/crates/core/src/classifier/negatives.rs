//! Negative samples for the joint-features classifier.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeStrategy {
    /// Permute a `patch_grid x patch_grid` tiling of a positive sample.
    PatchShuffle,
    /// Gaussian noise matching a positive sample's per-channel mean and spread.
    Noise,
    /// Either of the above, chosen per sample with equal odds.
    Mixed,
}

impl std::str::FromStr for NegativeStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "patch_shuffle" => Ok(Self::PatchShuffle),
            "noise" => Ok(Self::Noise),
            "mixed" => Ok(Self::Mixed),
            other => Err(format!("unknown negative strategy `{other}`")),
        }
    }
}

fn default_patch_grid() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSampleSpec {
    pub strategy: NegativeStrategy,
    #[serde(default = "default_patch_grid")]
    pub patch_grid: usize,
}

impl Default for NegativeSampleSpec {
    fn default() -> Self {
        Self {
            strategy: NegativeStrategy::PatchShuffle,
            patch_grid: default_patch_grid(),
        }
    }
}

impl NegativeSampleSpec {
    pub fn validate(&self, image_size: usize) -> Result<()> {
        if self.patch_grid < 2 || image_size % self.patch_grid != 0 {
            return Err(contract(format!(
                "patch_grid {} must be >= 2 and divide image size {image_size}",
                self.patch_grid
            )));
        }
        Ok(())
    }

    /// Builds one negative from a positive `(channels, size, size)` image.
    pub fn make(&self, positive: &[f32], channels: usize, size: usize, rng: &mut impl Rng) -> Vec<f32> {
        let strategy = match self.strategy {
            NegativeStrategy::Mixed => {
                if rng.random_bool(0.5) {
                    NegativeStrategy::PatchShuffle
                } else {
                    NegativeStrategy::Noise
                }
            }
            s => s,
        };
        match strategy {
            NegativeStrategy::Noise => noise_like(positive, channels, size, rng),
            _ => patch_shuffle(positive, channels, size, self.patch_grid, rng),
        }
    }
}

/// Rearranges a `grid x grid` tiling with a random non-identity permutation.
pub fn patch_shuffle(img: &[f32], channels: usize, size: usize, grid: usize, rng: &mut impl Rng) -> Vec<f32> {
    let tiles = grid * grid;
    let patch = size / grid;
    let mut perm: Vec<usize> = (0..tiles).collect();
    while perm.iter().enumerate().all(|(i, &p)| i == p) {
        perm.shuffle(rng);
    }
    let plane = size * size;
    let mut out = vec![0f32; img.len()];
    for (dst, &src) in perm.iter().enumerate() {
        let (dy, dx) = (dst / grid * patch, dst % grid * patch);
        let (sy, sx) = (src / grid * patch, src % grid * patch);
        for c in 0..channels {
            for r in 0..patch {
                let d = c * plane + (dy + r) * size + dx;
                let s = c * plane + (sy + r) * size + sx;
                out[d..d + patch].copy_from_slice(&img[s..s + patch]);
            }
        }
    }
    out
}

fn noise_like(img: &[f32], channels: usize, size: usize, rng: &mut impl Rng) -> Vec<f32> {
    let plane = size * size;
    let mut out = Vec::with_capacity(img.len());
    for c in 0..channels {
        let ch = &img[c * plane..(c + 1) * plane];
        let mean = ch.iter().sum::<f32>() / plane as f32;
        let std = (ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / plane as f32).sqrt();
        for _ in 0..plane {
            let n: f32 = StandardNormal.sample(rng);
            out.push((mean + std.max(0.05) * n).clamp(-1.0, 1.0));
        }
    }
    out
}

pub(crate) fn check_shapes(channels: usize, size: usize, len: usize) -> Result<()> {
    if channels * size * size != len {
        return Err(contract("negative source has the wrong length"));
    }
    Ok(())
}
