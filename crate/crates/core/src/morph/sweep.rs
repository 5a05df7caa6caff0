//! Sequential (or N-way parallel) lambda grids over one base configuration.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::MorphRunConfig;
use super::engine::MetricsRecord;
use super::run::{run_morph, RunState};
use super::steering::NoSteering;
use crate::error::{config, Result};
use crate::fsutil::{read_jsonl, write_atomic, write_json_atomic};

/// Lambda values tried for each weight when a grid leaves them out.
pub const SWEEP_PRESET: [f64; 4] = [0.1, 0.3, 1.0, 3.0];

fn preset() -> Vec<f64> {
    SWEEP_PRESET.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub base: MorphRunConfig,
    #[serde(default = "preset")]
    pub lambda_cls: Vec<f64>,
    #[serde(default = "preset")]
    pub lambda_disc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub run_id: String,
    pub lambda_cls: f64,
    pub lambda_disc: f64,
    pub state: Option<RunState>,
    pub final_iteration: u64,
    pub final_mean_target_prob: Option<f64>,
    pub final_mean_disc_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepIndex {
    pub sweep_id: String,
    pub entries: Vec<SweepEntry>,
}

impl SweepGrid {
    /// One config per (lambda_cls, lambda_disc) pair, row-major in `lambda_cls`.
    /// Pairs with both weights zero are skipped.
    pub fn expand(&self) -> Result<Vec<MorphRunConfig>> {
        if self.lambda_cls.is_empty() || self.lambda_disc.is_empty() {
            return Err(config("sweep grid needs at least one value per lambda"));
        }
        let mut out = Vec::new();
        for &lc in &self.lambda_cls {
            for &ld in &self.lambda_disc {
                if lc == 0.0 && ld == 0.0 {
                    continue;
                }
                let mut cfg = self.base.clone();
                cfg.run_id = format!("{}-c{lc}-d{ld}", self.base.run_id);
                cfg.lambda_cls = lc;
                cfg.lambda_disc = ld;
                cfg.check()?;
                out.push(cfg);
            }
        }
        Ok(out)
    }
}

fn entry_for(cfg: &MorphRunConfig, runs_root: &Path, outcome: Result<RunState>) -> SweepEntry {
    let metrics: Vec<MetricsRecord> =
        read_jsonl(&runs_root.join(&cfg.run_id).join("metrics.jsonl")).unwrap_or_default();
    let last = metrics.last();
    let (state, error) = match outcome {
        Ok(s) => (Some(s), None),
        Err(e) => (Some(RunState::Failed), Some(e.to_string())),
    };
    SweepEntry {
        run_id: cfg.run_id.clone(),
        lambda_cls: cfg.lambda_cls,
        lambda_disc: cfg.lambda_disc,
        state,
        final_iteration: last.map(|r| r.iteration).unwrap_or(0),
        final_mean_target_prob: last.map(|r| r.mean_target_prob),
        final_mean_disc_score: last.map(|r| r.mean_disc_score),
        error,
    }
}

/// Runs every grid point (at most `parallel` at a time) and writes
/// `<runs_root>/<base_id>-sweep/index.json` and `index.csv`. Failed points are
/// recorded in the index rather than aborting the sweep.
pub fn run_sweep(grid: &SweepGrid, runs_root: &Path, parallel: usize) -> Result<(SweepIndex, PathBuf)> {
    let configs = grid.expand()?;
    let slots: Vec<Mutex<Option<SweepEntry>>> = configs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..parallel.max(1).min(configs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cfg) = configs.get(i) else { break };
                let outcome = run_morph(cfg, runs_root, &mut NoSteering).map(|a| a.final_state);
                *slots[i].lock().expect("slot lock") = Some(entry_for(cfg, runs_root, outcome));
            });
        }
    });
    let entries: Vec<SweepEntry> = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every grid point ran"))
        .collect();
    let index = SweepIndex {
        sweep_id: format!("{}-sweep", grid.base.run_id),
        entries,
    };
    let dir = runs_root.join(&index.sweep_id);
    write_json_atomic(&dir.join("index.json"), &index)?;
    let mut csv = String::from("run_id,lambda_cls,lambda_disc,state,final_iteration,final_mean_target_prob,final_mean_disc_score\n");
    for e in &index.entries {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.run_id,
            e.lambda_cls,
            e.lambda_disc,
            e.state.map(|s| format!("{s:?}").to_lowercase()).unwrap_or_default(),
            e.final_iteration,
            e.final_mean_target_prob.map(|v| format!("{v:.6}")).unwrap_or_default(),
            e.final_mean_disc_score.map(|v| format!("{v:.6}")).unwrap_or_default(),
        ));
    }
    write_atomic(&dir.join("index.csv"), csv.as_bytes())?;
    Ok((index, dir))
}
