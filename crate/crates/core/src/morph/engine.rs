use std::collections::VecDeque;
use std::time::Instant;

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ClassSampling, MorphRunConfig};
use super::loss::composite_terms;
use super::steering::{SteeringCommand, SteeringEvent, SteeringKind};
use crate::checkpoint::{Checkpoint, Provenance};
use crate::classifier::Classifier;
use crate::error::{config, Error, Result};
use crate::gan::{sample_latents, Discriminator, Generator};
use crate::metrics::{mean_sigmoid, pixel_diversity};
use crate::seed;
use crate::tensor::{scalar_f64, to_f64_vec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenHashes {
    pub discriminator: String,
    pub classifier: String,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub loss_total: f64,
    pub loss_cls: f64,
    pub loss_disc: f64,
    pub lambda_cls: f64,
    pub lambda_disc: f64,
    pub mean_target_prob: f64,
    pub mean_disc_score: f64,
    pub diversity: f64,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steering: Vec<SteeringEvent>,
}

impl MetricsRecord {
    pub fn weighted_sum_residual(&self) -> f64 {
        (self.loss_total - super::loss::weighted_sum(self.loss_cls, self.loss_disc, self.lambda_cls, self.lambda_disc))
            .abs()
    }
}

/// Mutable side of a run: the generator being tuned and everything that moves.
pub struct MorphState {
    pub iteration: u64,
    pub generator: Generator,
    optimizer: AdamW,
    pub lambda_cls: f64,
    pub lambda_disc: f64,
    pub pending_steering: VecDeque<SteeringCommand>,
    pub frozen_hashes: FrozenHashes,
    rng: ChaCha8Rng,
    pub(crate) stop_requested: bool,
    pub(crate) snapshot_requested: bool,
    events: Vec<SteeringEvent>,
}

/// Applies one steering command at the current iteration boundary.
pub fn apply_steering(state: &mut MorphState, cmd: SteeringCommand) -> Result<()> {
    let mut event = SteeringEvent {
        kind: cmd.kind,
        issued_at_iteration: cmd.issued_at_iteration,
        applied_at_iteration: state.iteration,
        accepted: true,
        detail: String::new(),
    };
    let outcome = match cmd.kind {
        SteeringKind::SetLambdas => match cmd.resolve_lambdas((state.lambda_cls, state.lambda_disc)) {
            Ok((lc, ld)) => {
                state.lambda_cls = lc;
                state.lambda_disc = ld;
                event.detail = format!("lambda_cls={lc} lambda_disc={ld}");
                Ok(())
            }
            Err(e) => {
                event.accepted = false;
                event.detail = e.to_string();
                Err(e)
            }
        },
        SteeringKind::SnapshotNow => {
            state.snapshot_requested = true;
            Ok(())
        }
        SteeringKind::Stop => {
            state.stop_requested = true;
            Ok(())
        }
    };
    state.events.push(event);
    outcome
}

/// The fine-tuning loop body: generator updated, discriminator and classifier frozen.
pub struct MorphEngine {
    pub config: MorphRunConfig,
    pub state: MorphState,
    discriminator: Discriminator,
    classifier: Classifier,
    dataset_ids: Vec<String>,
}

impl MorphEngine {
    /// Builds an engine from in-memory networks; the generator is copied into
    /// trainable storage, the other two into frozen storage.
    pub fn new(config: MorphRunConfig, g: &Generator, d: &Discriminator, c: &Classifier) -> Result<Self> {
        config.check()?;
        check_compatible(g, d, c)?;
        if let ClassSampling::Fixed(list) = &config.class_sampling {
            if let Some(bad) = list.iter().find(|&&k| k >= g.spec.class_count) {
                return Err(config_err(format!("class_sampling lists class {bad} of {}", g.spec.class_count)));
            }
        }
        let generator = Generator {
            spec: g.spec.clone(),
            params: g.params.copy(true)?,
        };
        let discriminator = Discriminator {
            spec: d.spec.clone(),
            params: d.params.copy(false)?,
        };
        let classifier = Classifier {
            spec: c.spec.clone(),
            params: c.params.copy(false)?,
        };
        let optimizer = AdamW::new(
            generator.params.vars(),
            ParamsAdamW {
                lr: config.learning_rate,
                beta1: config.beta1,
                beta2: config.beta2,
                eps: 1e-8,
                weight_decay: 0.0,
            },
        )?;
        let frozen_hashes = FrozenHashes {
            discriminator: discriminator.params.content_hash()?,
            classifier: classifier.params.content_hash()?,
        };
        let state = MorphState {
            iteration: 0,
            generator,
            optimizer,
            lambda_cls: config.lambda_cls,
            lambda_disc: config.lambda_disc,
            pending_steering: VecDeque::new(),
            frozen_hashes,
            rng: ChaCha8Rng::seed_from_u64(seed::mix(config.seed, 100)),
            stop_requested: false,
            snapshot_requested: false,
            events: Vec::new(),
        };
        Ok(Self {
            config,
            state,
            discriminator,
            classifier,
            dataset_ids: Vec::new(),
        })
    }

    /// Loads all three checkpoints named by the config; any incompatibility is
    /// a configuration error raised before a single step runs.
    pub fn from_checkpoints(config: MorphRunConfig) -> Result<Self> {
        config.check()?;
        let gc = Checkpoint::load(&config.generator_ckpt)?;
        let dc = Checkpoint::load(&config.discriminator_ckpt)?;
        let cc = Checkpoint::load(&config.classifier_ckpt)?;
        let g = Generator::from_checkpoint(&gc, DType::F32, false).map_err(|e| config_err(e.to_string()))?;
        let d = Discriminator::from_checkpoint(&dc, DType::F32, false).map_err(|e| config_err(e.to_string()))?;
        let c = Classifier::from_checkpoint(&cc, DType::F32, false).map_err(|e| config_err(e.to_string()))?;
        let mut engine = Self::new(config, &g, &d, &c)?;
        engine.dataset_ids = gc.meta.dataset_ids.clone();
        Ok(engine)
    }

    pub fn generator(&self) -> &Generator {
        &self.state.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn enqueue(&mut self, cmd: SteeringCommand) {
        self.state.pending_steering.push_back(cmd);
    }

    /// Drains the steering queue in issue order. Rejected commands are logged
    /// and recorded; the run continues.
    pub fn apply_pending(&mut self) {
        while let Some(cmd) = self.state.pending_steering.pop_front() {
            if let Err(e) = apply_steering(&mut self.state, cmd) {
                log::warn!("run {}: {e}", self.config.run_id);
            }
        }
    }

    pub fn current_hashes(&self) -> Result<FrozenHashes> {
        Ok(FrozenHashes {
            discriminator: self.discriminator.params.content_hash()?,
            classifier: self.classifier.params.content_hash()?,
        })
    }

    pub fn verify_frozen(&self) -> Result<()> {
        let now = self.current_hashes()?;
        let start = &self.state.frozen_hashes;
        if now.discriminator != start.discriminator {
            return Err(Error::FrozenMutated {
                network: "discriminator".into(),
                before: start.discriminator.clone(),
                after: now.discriminator,
            });
        }
        if now.classifier != start.classifier {
            return Err(Error::FrozenMutated {
                network: "classifier".into(),
                before: start.classifier.clone(),
                after: now.classifier,
            });
        }
        Ok(())
    }

    fn sample_classes(&mut self, n: usize) -> Vec<usize> {
        match &self.config.class_sampling {
            ClassSampling::Uniform => crate::gan::sample_classes(&mut self.state.rng, n, self.state.generator.spec.class_count),
            ClassSampling::Fixed(list) => (0..n).map(|i| list[i % list.len()]).collect(),
        }
    }

    /// One optimizer update of the generator on the weighted loss of a fresh
    /// sample batch. Touches no dataset.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let started = Instant::now();
        let n = self.config.batch_size;
        let g = &self.state.generator;
        let z = sample_latents(&mut self.state.rng, n, g.spec.latent_dim, g.dtype())?;
        let y = self.sample_classes(n);
        let (lc, ld) = (self.state.lambda_cls, self.state.lambda_disc);
        let images = self.state.generator.forward(&z, &y)?;
        let terms = composite_terms(&images, &y, &self.classifier, &self.discriminator, lc, ld)?;
        let next = self.state.iteration + 1;

        let loss_total = scalar_f64(&terms.loss.total)?;
        let loss_cls = scalar_f64(&terms.loss.cls)?;
        let loss_disc = scalar_f64(&terms.loss.disc)?;
        if ![loss_total, loss_cls, loss_disc].iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged {
                iteration: next,
                what: format!("loss (total={loss_total}, cls={loss_cls}, disc={loss_disc})"),
                diagnostic: None,
            });
        }
        let grads = terms.loss.total.backward()?;
        for var in self.state.generator.params.vars() {
            if let Some(gv) = grads.get(&var) {
                if !scalar_f64(&gv.abs()?.sum_all()?)?.is_finite() {
                    return Err(Error::Diverged {
                        iteration: next,
                        what: "generator gradient".into(),
                        diagnostic: None,
                    });
                }
            }
        }
        self.state.optimizer.step(&grads)?;
        self.state.iteration = next;
        if self.config.debug_freeze_checks {
            self.verify_frozen()?;
        }

        let mean_target_prob = mean(&to_f64_vec(&terms.target_probs)?);
        let record = MetricsRecord {
            iteration: next,
            loss_total,
            loss_cls,
            loss_disc,
            lambda_cls: lc,
            lambda_disc: ld,
            mean_target_prob,
            mean_disc_score: mean_sigmoid(&terms.disc_scores)?,
            diversity: pixel_diversity(&images.detach())?,
            wall_ms: if self.config.deterministic {
                0
            } else {
                started.elapsed().as_millis() as u64
            },
            steering: std::mem::take(&mut self.state.events),
        };
        Ok(record)
    }

    /// Generator checkpoint tagged with the current iteration.
    pub fn snapshot(&self) -> Result<Checkpoint> {
        self.state.generator.to_checkpoint(Provenance {
            iterations: self.state.iteration,
            dataset_ids: self.dataset_ids.clone(),
            seed: self.config.seed,
            extra: serde_json::json!({
                "run_id": self.config.run_id,
                "lambda_cls": self.state.lambda_cls,
                "lambda_disc": self.state.lambda_disc,
            }),
        })
    }

    /// Renders the fixed evaluation batch through the current generator.
    pub fn render(&self, z: &Tensor, y: &[usize]) -> Result<Tensor> {
        Ok(self.state.generator.forward(z, y)?.detach())
    }
}

/// Same as [`MorphEngine::step`]; named after the operation it performs.
pub fn morph_step(engine: &mut MorphEngine) -> Result<MetricsRecord> {
    engine.step()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn config_err(msg: String) -> Error {
    config(msg)
}

fn check_compatible(g: &Generator, d: &Discriminator, c: &Classifier) -> Result<()> {
    let gs = &g.spec;
    if (gs.image_size, gs.channels) != (d.spec.image_size, d.spec.channels) {
        return Err(config(format!(
            "generator emits ({}, {2}, {2}) images, discriminator expects ({}, {3}, {3})",
            gs.channels, d.spec.channels, gs.image_size, d.spec.image_size
        )));
    }
    if gs.class_count != d.spec.class_count {
        return Err(config(format!(
            "generator has {} classes, discriminator {}",
            gs.class_count, d.spec.class_count
        )));
    }
    let b = &c.spec.backbone;
    if (gs.image_size, gs.channels) != (b.image_size, b.channels) {
        return Err(config(format!(
            "generator emits ({}, {2}, {2}) images, classifier expects ({}, {3}, {3})",
            gs.channels, b.channels, gs.image_size, b.image_size
        )));
    }
    if g.dtype() != d.params.dtype() || g.dtype() != c.params.dtype() {
        return Err(config("generator, discriminator and classifier must share a dtype"));
    }
    Ok(())
}
