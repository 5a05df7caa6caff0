//! Run directories and the supervised fine-tuning loop.
//!
//! ```text
//! runs/<run_id>/
//!   config.json          effective config
//!   metrics.jsonl        one MetricsRecord per step
//!   status.json          rewritten atomically every iteration
//!   snapshots/iter_<k>.ckpt (+ iter_<k>.eval.json when an oracle is configured)
//!   grids/iter_<k>.png   3x3 sheet of the fixed evaluation latents
//! ```

use std::path::{Path, PathBuf};

use candle_core::DType;
use chrono::Utc;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::MorphRunConfig;
use super::engine::{FrozenHashes, MorphEngine};
use super::steering::SteeringSource;
use crate::checkpoint::Checkpoint;
use crate::classifier::FeatureOracle;
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json_atomic, JsonlWriter};
use crate::gan::sample_latents;
use crate::grid;
use crate::metrics::{evaluate_snapshot, EvalConfig};
use crate::seed;

pub const RUNS_DIR_ENV: &str = "DISTMORPH_RUNS_DIR";
pub const GRID_SIZE: usize = 9;
const GRID_COLS: usize = 3;
const GRID_SCALE: u32 = 4;

/// `$DISTMORPH_RUNS_DIR`, or `runs` in the working directory.
pub fn default_runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, Clone)]
pub struct RunLayout {
    pub dir: PathBuf,
}

impl RunLayout {
    pub fn new(runs_root: &Path, run_id: &str) -> Self {
        Self {
            dir: runs_root.join(run_id),
        }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }
    pub fn status(&self) -> PathBuf {
        self.dir.join("status.json")
    }
    pub fn snapshots_dir(&self) -> PathBuf {
        self.dir.join("snapshots")
    }
    pub fn grids_dir(&self) -> PathBuf {
        self.dir.join("grids")
    }
    pub fn snapshot(&self, iteration: u64) -> PathBuf {
        self.snapshots_dir().join(format!("iter_{iteration}.ckpt"))
    }
    pub fn eval_report(&self, iteration: u64) -> PathBuf {
        self.snapshots_dir().join(format!("iter_{iteration}.eval.json"))
    }
    pub fn grid(&self, iteration: u64) -> PathBuf {
        self.grids_dir().join(format!("iter_{iteration}.png"))
    }

    /// Iterations with a file named `iter_<k>.<ext>` in `dir`, ascending.
    fn iterations_in(dir: &Path, ext: &str) -> Vec<u64> {
        let mut out: Vec<u64> = std::fs::read_dir(dir)
            .into_iter()
            .flatten()
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_prefix("iter_")?
                    .strip_suffix(&format!(".{ext}"))?
                    .parse()
                    .ok()
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn snapshot_iterations(&self) -> Vec<u64> {
        Self::iterations_in(&self.snapshots_dir(), "ckpt")
    }

    pub fn grid_iterations(&self) -> Vec<u64> {
        Self::iterations_in(&self.grids_dir(), "png")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Stopped,
    Finished,
    Failed,
}

impl RunState {
    pub fn is_terminal(self) -> bool {
        self != RunState::Running
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub lambda_cls: f64,
    pub lambda_disc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub state: RunState,
    pub iteration: u64,
    pub lambdas: Lambdas,
    pub updated_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunStatus {
    pub fn read(layout: &RunLayout) -> Result<Self> {
        read_json(&layout.status())
    }

    pub fn write(&self, layout: &RunLayout) -> Result<()> {
        write_json_atomic(&layout.status(), self)
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub final_iteration: u64,
    pub final_state: RunState,
    pub snapshots: Vec<(u64, PathBuf)>,
    pub grids: Vec<(u64, PathBuf)>,
    pub metrics_path: PathBuf,
    pub frozen_hashes_start: FrozenHashes,
    pub frozen_hashes_end: FrozenHashes,
}

struct Publisher {
    layout: RunLayout,
    eval_z: candle_core::Tensor,
    eval_y: Vec<usize>,
    oracle: Option<FeatureOracle>,
    snapshots: Vec<(u64, PathBuf)>,
    grids: Vec<(u64, PathBuf)>,
}

impl Publisher {
    fn grid(&mut self, engine: &MorphEngine) -> Result<()> {
        let k = engine.state.iteration;
        if self.grids.last().is_some_and(|(i, _)| *i == k) {
            return Ok(());
        }
        let img = grid::render_grid(&engine.render(&self.eval_z, &self.eval_y)?, GRID_COLS, GRID_SCALE)?;
        let path = self.layout.grid(k);
        grid::save_png(&img, &path)?;
        self.grids.push((k, path));
        Ok(())
    }

    fn snapshot(&mut self, engine: &MorphEngine) -> Result<()> {
        let k = engine.state.iteration;
        if self.snapshots.last().is_some_and(|(i, _)| *i == k) {
            return Ok(());
        }
        let path = self.layout.snapshot(k);
        engine.snapshot()?.save(&path)?;
        self.snapshots.push((k, path));
        self.evaluate(engine)?;
        self.grid(engine)
    }

    fn evaluate(&self, engine: &MorphEngine) -> Result<()> {
        if let Some(oracle) = &self.oracle {
            let report = evaluate_snapshot(
                engine.generator(),
                engine.classifier(),
                engine.discriminator(),
                oracle,
                &EvalConfig::default(),
                &engine.config.run_id,
                engine.state.iteration,
            )?;
            write_json_atomic(&self.layout.eval_report(engine.state.iteration), &report)?;
        }
        Ok(())
    }
}

fn status(engine: &MorphEngine, state: RunState, error: Option<String>) -> RunStatus {
    RunStatus {
        state,
        iteration: engine.state.iteration,
        lambdas: Lambdas {
            lambda_cls: engine.state.lambda_cls,
            lambda_disc: engine.state.lambda_disc,
        },
        updated_at: Utc::now().to_rfc3339(),
        error,
    }
}

/// Runs morph steps until `max_iterations` or a stop command, publishing
/// metrics, status, snapshots and grids under `runs_root/<run_id>`. An existing
/// directory for the same run id is replaced.
pub fn run_morph(config: &MorphRunConfig, runs_root: &Path, steering: &mut dyn SteeringSource) -> Result<RunArtifacts> {
    let engine = MorphEngine::from_checkpoints(config.clone())?;
    let oracle = match &config.eval_oracle_ckpt {
        Some(p) => Some(FeatureOracle::from_checkpoint(&Checkpoint::load(p)?)?),
        None => None,
    };
    run_engine(engine, oracle, runs_root, steering)
}

/// [`run_morph`] over an already constructed engine.
pub fn run_engine(
    mut engine: MorphEngine,
    oracle: Option<FeatureOracle>,
    runs_root: &Path,
    steering: &mut dyn SteeringSource,
) -> Result<RunArtifacts> {
    let config = engine.config.clone();
    let layout = RunLayout::new(runs_root, &config.run_id);
    if layout.dir.exists() {
        std::fs::remove_dir_all(&layout.dir)?;
    }
    std::fs::create_dir_all(layout.snapshots_dir())?;
    std::fs::create_dir_all(layout.grids_dir())?;
    write_json_atomic(&layout.config(), &config)?;
    status(&engine, RunState::Running, None).write(&layout)?;

    let mut eval_rng = ChaCha8Rng::seed_from_u64(seed::mix(config.seed, 200));
    let g = engine.generator();
    let eval_z = sample_latents(&mut eval_rng, GRID_SIZE, g.spec.latent_dim, DType::F32)?;
    let eval_y = (0..GRID_SIZE).map(|i| i % g.spec.class_count).collect();
    let mut publisher = Publisher {
        layout: layout.clone(),
        eval_z,
        eval_y,
        oracle,
        snapshots: Vec::new(),
        grids: Vec::new(),
    };
    let start_hashes = engine.state.frozen_hashes.clone();

    let result = drive(&mut engine, &mut publisher, steering, &config, &layout);
    match result {
        Ok(final_state) => {
            let end_hashes = engine.current_hashes()?;
            if let Err(e) = engine.verify_frozen() {
                status(&engine, RunState::Failed, Some(e.to_string())).write(&layout)?;
                return Err(e);
            }
            status(&engine, final_state, None).write(&layout)?;
            Ok(RunArtifacts {
                run_dir: layout.dir.clone(),
                final_iteration: engine.state.iteration,
                final_state,
                snapshots: publisher.snapshots,
                grids: publisher.grids,
                metrics_path: layout.metrics(),
                frozen_hashes_start: start_hashes,
                frozen_hashes_end: end_hashes,
            })
        }
        Err(Error::Diverged { iteration, what, .. }) => {
            let path = layout.snapshots_dir().join(format!("diagnostic_iter_{iteration}.ckpt"));
            let diagnostic = engine.snapshot().and_then(|c| c.save(&path)).ok().map(|_| path);
            let err = Error::Diverged {
                iteration,
                what,
                diagnostic,
            };
            status(&engine, RunState::Failed, Some(err.to_string())).write(&layout)?;
            Err(err)
        }
        Err(e) => {
            status(&engine, RunState::Failed, Some(e.to_string())).write(&layout)?;
            Err(e)
        }
    }
}

fn drive(
    engine: &mut MorphEngine,
    publisher: &mut Publisher,
    steering: &mut dyn SteeringSource,
    config: &MorphRunConfig,
    layout: &RunLayout,
) -> Result<RunState> {
    let mut metrics = JsonlWriter::create(&layout.metrics())?;
    publisher.grid(engine)?;
    publisher.evaluate(engine)?;
    loop {
        for cmd in steering.poll(engine.state.iteration) {
            engine.enqueue(cmd);
        }
        engine.apply_pending();
        if std::mem::take(&mut engine.state.snapshot_requested) {
            publisher.snapshot(engine)?;
        }
        if engine.state.stop_requested {
            publisher.snapshot(engine)?;
            return Ok(RunState::Stopped);
        }
        if engine.state.iteration >= config.max_iterations {
            publisher.snapshot(engine)?;
            return Ok(RunState::Finished);
        }
        let record = engine.step()?;
        metrics.append(&record)?;
        let k = engine.state.iteration;
        if config.snapshot_at.binary_search(&k).is_ok() {
            publisher.snapshot(engine)?;
        }
        if config.grid_every > 0 && k % config.grid_every == 0 {
            publisher.grid(engine)?;
        }
        status(engine, RunState::Running, None).write(layout)?;
    }
}
