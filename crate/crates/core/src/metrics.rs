//! Quantitative stand-ins for visual judgments: target-class probability,
//! realism, and pairwise-distance diversity in pixel and oracle-feature space.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::classifier::{classify, Classifier, FeatureOracle};
use crate::error::{config, Error, Result};
use crate::fsutil::write_atomic;
use crate::gan::{sample_latents, Discriminator, Generator};
use crate::tensor::to_f64_vec;

pub const MIN_EVAL_SAMPLES: usize = 256;

/// Mean Euclidean distance over all unordered pairs of `n` rows of length `dim`.
/// Zero exactly when every row is identical; invariant under row permutation.
pub fn mean_pairwise_l2(rows: &[f64], dim: usize) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    let n = rows.len() / dim;
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let a = &rows[i * dim..(i + 1) * dim];
        for j in i + 1..n {
            let b = &rows[j * dim..(j + 1) * dim];
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            total += d2.sqrt();
        }
    }
    total / (n * (n - 1) / 2) as f64
}

/// Diversity of a `(n, ...)` batch in pixel space.
pub fn pixel_diversity(batch: &Tensor) -> Result<f64> {
    let n = batch.dim(0)?;
    let dim = batch.elem_count() / n.max(1);
    Ok(mean_pairwise_l2(&to_f64_vec(batch)?, dim))
}

/// Mean of `sigmoid(score)`, the bounded realism reading used in metrics.
pub fn mean_sigmoid(scores: &Tensor) -> Result<f64> {
    let s = to_f64_vec(scores)?;
    Ok(s.iter().map(|v| 1.0 / (1.0 + (-v).exp())).sum::<f64>() / s.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub samples: usize,
    pub seed: u64,
    pub chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 512,
            seed: 20_190_901,
            chunk: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBreakdown {
    pub count: usize,
    pub mean_target_prob: f64,
    pub mean_disc_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_id: String,
    pub iteration: u64,
    pub eval_seed: u64,
    pub samples: usize,
    pub mean_target_prob: f64,
    /// Mean `sigmoid(D(x, y))` over the evaluation batch.
    pub mean_disc_score: f64,
    pub diversity_pixel: f64,
    pub diversity_feature: f64,
    pub per_class_breakdown: BTreeMap<String, ClassBreakdown>,
}

/// Fixed evaluation latents: classes cycle `0..class_count`, latents are drawn
/// from a stream seeded only by `cfg.seed`.
pub fn eval_latents(g: &Generator, cfg: &EvalConfig) -> Result<(Tensor, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z = sample_latents(&mut rng, cfg.samples, g.spec.latent_dim, g.dtype())?;
    let y = (0..cfg.samples).map(|i| i % g.spec.class_count).collect();
    Ok((z, y))
}

/// Generates the evaluation batch in chunks.
fn eval_images(g: &Generator, z: &Tensor, y: &[usize], chunk: usize) -> Result<Tensor> {
    let mut parts = Vec::new();
    let mut start = 0;
    while start < y.len() {
        let len = chunk.max(1).min(y.len() - start);
        parts.push(g.forward(&z.narrow(0, start, len)?, &y[start..start + len])?.detach());
        start += len;
    }
    Ok(Tensor::cat(&parts, 0)?)
}

pub fn evaluate_snapshot(
    g: &Generator,
    c: &Classifier,
    d: &Discriminator,
    oracle: &FeatureOracle,
    cfg: &EvalConfig,
    run_id: &str,
    iteration: u64,
) -> Result<EvalReport> {
    if cfg.samples < MIN_EVAL_SAMPLES {
        return Err(config(format!(
            "evaluation needs at least {MIN_EVAL_SAMPLES} samples, got {}",
            cfg.samples
        )));
    }
    let (z, y) = eval_latents(g, cfg)?;
    let images = eval_images(g, &z, &y, cfg.chunk)?.to_dtype(DType::F32)?;
    let mut target = Vec::with_capacity(y.len());
    let mut disc = Vec::with_capacity(y.len());
    let mut feats = Vec::new();
    let mut start = 0;
    while start < y.len() {
        let len = cfg.chunk.max(1).min(y.len() - start);
        let x = images.narrow(0, start, len)?;
        let probs = classify(c, &x)?;
        target.extend(to_f64_vec(&probs.narrow(1, c.spec.target_class, 1)?)?);
        let scores = to_f64_vec(&d.score(&x, &y[start..start + len])?)?;
        disc.extend(scores.iter().map(|v| 1.0 / (1.0 + (-v).exp())));
        feats.extend(to_f64_vec(&oracle.features(&x)?)?);
        start += len;
    }
    let feat_dim = feats.len() / y.len();
    let mut per_class: BTreeMap<String, ClassBreakdown> = BTreeMap::new();
    for (i, &cls) in y.iter().enumerate() {
        let e = per_class.entry(cls.to_string()).or_insert(ClassBreakdown {
            count: 0,
            mean_target_prob: 0.0,
            mean_disc_score: 0.0,
        });
        e.count += 1;
        e.mean_target_prob += target[i];
        e.mean_disc_score += disc[i];
    }
    for e in per_class.values_mut() {
        e.mean_target_prob /= e.count as f64;
        e.mean_disc_score /= e.count as f64;
    }
    let n = y.len() as f64;
    let report = EvalReport {
        run_id: run_id.to_string(),
        iteration,
        eval_seed: cfg.seed,
        samples: y.len(),
        mean_target_prob: target.iter().sum::<f64>() / n,
        mean_disc_score: disc.iter().sum::<f64>() / n,
        diversity_pixel: pixel_diversity(&images)?,
        diversity_feature: mean_pairwise_l2(&feats, feat_dim),
        per_class_breakdown: per_class,
    };
    let finite = [
        report.mean_target_prob,
        report.mean_disc_score,
        report.diversity_pixel,
        report.diversity_feature,
    ]
    .iter()
    .all(|v| v.is_finite());
    if !finite {
        return Err(Error::Diverged {
            iteration,
            what: "evaluation metric".into(),
            diagnostic: None,
        });
    }
    Ok(report)
}

/// Loads a generator snapshot and evaluates it; load failures name the file.
pub fn evaluate_snapshot_file(
    snapshot: &Path,
    c: &Classifier,
    d: &Discriminator,
    oracle: &FeatureOracle,
    cfg: &EvalConfig,
    run_id: &str,
) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(snapshot)?;
    let g = Generator::from_checkpoint(&ckpt, DType::F32, false).map_err(|e| Error::Checkpoint {
        path: snapshot.to_path_buf(),
        reason: e.to_string(),
    })?;
    evaluate_snapshot(&g, c, d, oracle, cfg, run_id, ckpt.meta.iterations)
}

/// Mean probability the oracle assigns to the class each sample was generated
/// for: how recognizably the generator renders its conditioning class.
pub fn class_consistency(g: &Generator, oracle: &FeatureOracle, samples: usize, seed: u64) -> Result<f64> {
    let cfg = EvalConfig {
        samples,
        seed,
        ..EvalConfig::default()
    };
    let (z, y) = eval_latents(g, &cfg)?;
    let images = eval_images(g, &z, &y, cfg.chunk)?.to_dtype(DType::F32)?;
    let probs = oracle.class_probs(&images)?;
    let rows = to_f64_vec(&probs)?;
    let k = oracle.spec.class_count;
    Ok(y.iter().enumerate().map(|(i, &c)| rows[i * k + c]).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub iteration: u64,
    pub eval_seed: u64,
    pub joint_run: String,
    pub contrastive_run: String,
    /// `joint - contrastive` for every scalar field.
    pub deltas: BTreeMap<String, f64>,
    /// Exploratory flag: reported, never asserted.
    pub joint_more_diverse_feature: bool,
    pub joint_more_diverse_pixel: bool,
}

pub fn compare_modes(joint: &EvalReport, contrastive: &EvalReport) -> Result<ComparisonSummary> {
    if joint.iteration != contrastive.iteration {
        return Err(Error::Comparison(format!(
            "reports are at iterations {} and {}",
            joint.iteration, contrastive.iteration
        )));
    }
    if joint.eval_seed != contrastive.eval_seed {
        return Err(Error::Comparison(format!(
            "reports use eval seeds {} and {}",
            joint.eval_seed, contrastive.eval_seed
        )));
    }
    let mut deltas = BTreeMap::new();
    deltas.insert("mean_target_prob".into(), joint.mean_target_prob - contrastive.mean_target_prob);
    deltas.insert("mean_disc_score".into(), joint.mean_disc_score - contrastive.mean_disc_score);
    deltas.insert("diversity_pixel".into(), joint.diversity_pixel - contrastive.diversity_pixel);
    deltas.insert("diversity_feature".into(), joint.diversity_feature - contrastive.diversity_feature);
    Ok(ComparisonSummary {
        iteration: joint.iteration,
        eval_seed: joint.eval_seed,
        joint_run: joint.run_id.clone(),
        contrastive_run: contrastive.run_id.clone(),
        joint_more_diverse_feature: joint.diversity_feature > contrastive.diversity_feature,
        joint_more_diverse_pixel: joint.diversity_pixel > contrastive.diversity_pixel,
        deltas,
    })
}

const COLUMNS: [&str; 7] = [
    "run_id",
    "iteration",
    "samples",
    "mean_target_prob",
    "mean_disc_score",
    "diversity_pixel",
    "diversity_feature",
];

fn row(r: &EvalReport) -> [String; 7] {
    [
        r.run_id.clone(),
        r.iteration.to_string(),
        r.samples.to_string(),
        format!("{:.6}", r.mean_target_prob),
        format!("{:.6}", r.mean_disc_score),
        format!("{:.6}", r.diversity_pixel),
        format!("{:.6}", r.diversity_feature),
    ]
}

/// Writes `report.csv` and `report.html` into `dir`; returns both paths.
pub fn write_report(dir: &Path, reports: &[EvalReport]) -> Result<(PathBuf, PathBuf)> {
    let mut csv = COLUMNS.join(",");
    csv.push('\n');
    for r in reports {
        csv.push_str(&row(r).join(","));
        csv.push('\n');
    }
    let mut html = String::from(
        "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>distmorph report</title>\n\
         <style>body{font-family:sans-serif}td,th{padding:4px 10px;text-align:right}</style></head><body>\n<table>\n<tr>",
    );
    for c in COLUMNS {
        let _ = write!(html, "<th>{c}</th>");
    }
    html.push_str("</tr>\n");
    for r in reports {
        html.push_str("<tr>");
        for cell in row(r) {
            let _ = write!(html, "<td>{}</td>", escape(&cell));
        }
        html.push_str("</tr>\n");
    }
    html.push_str("</table>\n</body></html>\n");
    let csv_path = dir.join("report.csv");
    let html_path = dir.join("report.html");
    write_atomic(&csv_path, csv.as_bytes())?;
    write_atomic(&html_path, html.as_bytes())?;
    Ok((csv_path, html_path))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
