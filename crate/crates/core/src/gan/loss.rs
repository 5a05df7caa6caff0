//! Hinge losses for conditional GAN training.

use candle_core::Tensor;

use crate::error::Result;

/// `mean(relu(1 - D(real))) + mean(relu(1 + D(fake)))`.
pub fn discriminator_hinge(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    let real = real_scores.neg()?.affine(1.0, 1.0)?.relu()?.mean_all()?;
    let fake = fake_scores.affine(1.0, 1.0)?.relu()?.mean_all()?;
    Ok((real + fake)?)
}

/// Generator realism term: `-mean(D(fake))`.
pub fn generator_hinge(fake_scores: &Tensor) -> Result<Tensor> {
    Ok(fake_scores.mean_all()?.neg()?)
}
