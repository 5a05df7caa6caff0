//! Generator fine-tuning against a frozen cross-dataset classifier and a frozen
//! discriminator: each step samples a batch from the generator, scores it with
//! both frozen networks, and updates only the generator on
//! `lambda_cls * loss_cls + lambda_disc * loss_disc`. No training data is read.

mod config;
mod engine;
mod loss;
mod run;
mod steering;
mod sweep;

pub use config::{ClassSampling, FieldError, MorphRunConfig};
pub use engine::{apply_steering, morph_step, FrozenHashes, MetricsRecord, MorphEngine, MorphState};
pub use loss::{composite_loss, weighted_sum, CompositeLoss};
pub use run::{
    default_runs_root, run_engine, run_morph, Lambdas, RunArtifacts, RunLayout, RunState, RunStatus, GRID_SIZE,
    RUNS_DIR_ENV,
};
pub use steering::{
    NoSteering, ScriptedSteering, SteeringCommand, SteeringEvent, SteeringKind, SteeringPayload, SteeringSource,
};
pub use sweep::{run_sweep, SweepEntry, SweepGrid, SweepIndex, SWEEP_PRESET};
