use candle_core::Tensor;

use crate::classifier::{guidance_loss_from_logits, Classifier};
use crate::error::Result;
use crate::gan::{loss::generator_hinge, Discriminator};

/// The three scalar losses of one morph step, all carrying gradients back to
/// the images they were computed from.
#[derive(Debug, Clone)]
pub struct CompositeLoss {
    pub total: Tensor,
    pub cls: Tensor,
    pub disc: Tensor,
}

/// `lambda_cls * loss_cls + lambda_disc * loss_disc`, in that order.
pub fn weighted_sum(loss_cls: f64, loss_disc: f64, lambda_cls: f64, lambda_disc: f64) -> f64 {
    lambda_cls * loss_cls + lambda_disc * loss_disc
}

fn weighted_tensor(cls: &Tensor, disc: &Tensor, lambda_cls: f64, lambda_disc: f64) -> Result<Tensor> {
    Ok((cls.affine(lambda_cls, 0.0)? + disc.affine(lambda_disc, 0.0)?)?)
}

pub(crate) struct CompositeTerms {
    pub loss: CompositeLoss,
    pub target_probs: Tensor,
    pub disc_scores: Tensor,
}

pub(crate) fn composite_terms(
    images: &Tensor,
    y: &[usize],
    c: &Classifier,
    d: &Discriminator,
    lambda_cls: f64,
    lambda_disc: f64,
) -> Result<CompositeTerms> {
    let logits = c.logits(images)?;
    let cls = guidance_loss_from_logits(&logits, c.spec.target_class)?;
    let scores = d.score(images, y)?;
    let disc = generator_hinge(&scores)?;
    let total = weighted_tensor(&cls, &disc, lambda_cls, lambda_disc)?;
    let probs = candle_nn::ops::softmax(&logits.detach(), 1)?;
    Ok(CompositeTerms {
        loss: CompositeLoss { total, cls, disc },
        target_probs: probs.narrow(1, c.spec.target_class, 1)?.squeeze(1)?,
        disc_scores: scores.detach(),
    })
}

/// Guidance loss from the frozen classifier, realism loss `-mean(D(x, y))` from
/// the frozen discriminator, and their weighted sum.
pub fn composite_loss(
    images: &Tensor,
    y: &[usize],
    c: &Classifier,
    d: &Discriminator,
    lambda_cls: f64,
    lambda_disc: f64,
) -> Result<CompositeLoss> {
    Ok(composite_terms(images, y, c, d, lambda_cls, lambda_disc)?.loss)
}
