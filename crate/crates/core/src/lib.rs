//! Fine-tune a pretrained class-conditional GAN generator so its output
//! distribution drifts toward features picked out by a classifier trained on a
//! second dataset, while a frozen copy of the original discriminator keeps the
//! samples plausible.
//!
//! The pipeline is split into the same stages the CLI exposes:
//!
//! * [`data`]: dataset specs, manifests, synthetic stand-ins, batching.
//! * [`gan`]: generator/discriminator, hinge pretraining, interpolation.
//! * [`classifier`]: contrastive and joint cross-dataset classifiers.
//! * [`morph`]: the fine-tuning loop, steering, run directories, sweeps.
//! * [`metrics`]: snapshot evaluation and mode comparison.
//! * [`service`]: HTTP/SSE control surface over running jobs.

pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod data;
pub mod error;
pub mod fsutil;
pub mod gan;
pub mod grid;
pub mod metrics;
pub mod morph;
pub mod nn;
pub mod params;
pub mod reference;
pub mod seed;
pub mod service;
pub mod tensor;

pub use error::{Error, Result};

/// Batch size used by the fine-tuning loop unless configured otherwise.
pub const DEFAULT_BATCH_SIZE: usize = 9;
