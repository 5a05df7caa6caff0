//! Command-line front end. [`run`] does the work and returns the process exit
//! code: 0 on success, 1 on runtime failure, 2 on usage errors.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::Checkpoint;
use crate::classifier::{
    train_classifier, train_feature_oracle, BackboneSpec, Classifier, ClassifierMode, ClassifierSpec,
    ClassifierTrainConfig, FeatureOracle, NegativeSampleSpec,
};
use crate::data::{load_dataset, make_stand_in_pair, read_manifest, write_manifest, DatasetSpec, StandInStyle};
use crate::error::{config, Error, Result};
use crate::fsutil::{read_json, write_json_atomic};
use crate::gan::{pretrain_gan, Discriminator, GanTrainConfig, Generator};
use crate::metrics::{class_consistency, compare_modes, evaluate_snapshot_file, write_report, EvalConfig, EvalReport};
use crate::morph::{default_runs_root, run_morph, run_sweep, MorphRunConfig, NoSteering, RunLayout, SweepGrid};
use crate::seed;

#[derive(Debug, Parser)]
#[command(name = "distmorph", version, about = "Fine-tune a pretrained conditional GAN toward a cross-dataset classifier")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Root seed; every random stream of the command is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Zero wall-clock fields in run logs so identical runs are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Dotted-key override applied after the config file, e.g. `--set lambda_cls=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write dataset manifest(s), optionally as a stand-in A/B pair.
    PrepareData {
        /// DatasetSpec JSON; defaults to a 32x32 synthetic-shapes base.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_style)]
        stand_in: Option<StandInStyle>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the conditional GAN (and the evaluation oracle) on dataset A.
    Pretrain {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a contrastive or joint cross-dataset classifier.
    TrainClassifier {
        #[arg(long)]
        mode: ClassifierMode,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one fine-tuning job.
    Morph {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to $DISTMORPH_RUNS_DIR or ./runs.
        #[arg(long)]
        runs_dir: Option<PathBuf>,
    },
    /// Run a lambda grid and write a comparison index.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        runs_dir: Option<PathBuf>,
    },
    /// Consolidate a run's snapshot evaluations into CSV and HTML.
    Report {
        #[arg(long)]
        run: String,
        /// A second run to compare against at matched iterations (joint vs contrastive).
        #[arg(long)]
        compare: Option<String>,
        #[arg(long)]
        runs_dir: Option<PathBuf>,
    },
    /// Serve the HTTP control API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long)]
        runs_dir: Option<PathBuf>,
    },
}

fn parse_style(s: &str) -> std::result::Result<StandInStyle, String> {
    serde_json::from_value(Value::String(s.into())).map_err(|_| format!("unknown stand-in style `{s}`"))
}

/// `pretrain` config file: the GAN recipe plus the evaluation oracle trained alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub gan: GanTrainConfig,
    pub oracle: Option<OracleConfig>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            gan: GanTrainConfig::default(),
            oracle: Some(OracleConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub width: usize,
    pub train: ClassifierTrainConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            width: 8,
            train: ClassifierTrainConfig {
                backbone_iterations: 600,
                iterations: 0,
                ..ClassifierTrainConfig::default()
            },
        }
    }
}

/// `train-classifier` config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierCliConfig {
    pub width: usize,
    pub negatives: NegativeSampleSpec,
    pub train: ClassifierTrainConfig,
}

impl Default for ClassifierCliConfig {
    fn default() -> Self {
        Self {
            width: 8,
            negatives: NegativeSampleSpec::default(),
            train: ClassifierTrainConfig {
                iterations: 2500,
                ..ClassifierTrainConfig::default()
            },
        }
    }
}

/// Sets `path` (dot separated) in a JSON object tree. The value is parsed as
/// JSON when possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config(format!("override `{assignment}` is not KEY=VALUE")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(config(format!("override key `{key}` is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config(format!("override `{key}`: `{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        node = obj.entry(*part).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last key part")
}

/// Loads `file` (or `default`), applies overrides, and deserializes.
pub fn load_config<T: Serialize + DeserializeOwned>(
    file: Option<&Path>,
    default: Option<T>,
    overrides: &[String],
) -> Result<T> {
    let mut value = match (file, default) {
        (Some(p), _) => read_json::<Value>(p).map_err(|e| config(format!("config {}: {e}", p.display())))?,
        (None, Some(d)) => serde_json::to_value(d)?,
        (None, None) => return Err(config("a config file is required")),
    };
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    serde_json::from_value(value).map_err(|e| config(format!("effective config: {e}")))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Diverged {
                diagnostic: Some(p), ..
            } = &e
            {
                eprintln!("diagnostic checkpoint: {}", p.display());
            }
            1
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::PrepareData { config, stand_in, out } => {
            let default = DatasetSpec::synthetic_shapes("shapes", 32, 3, 0);
            let mut spec: DatasetSpec = load_config(config.as_deref(), Some(default), &g.overrides)?;
            if let Some(s) = g.seed {
                spec.seed = s;
            }
            std::fs::create_dir_all(out)?;
            let specs = match stand_in {
                Some(style) => {
                    let (a, b) = make_stand_in_pair(*style, &spec)?;
                    vec![("a.json", a), ("b.json", b)]
                }
                None => vec![("dataset.json", spec)],
            };
            for (name, spec) in specs {
                let ds = load_dataset(&spec)?;
                for w in ds.warnings() {
                    log::warn!("{w}");
                }
                let path = out.join(name);
                write_manifest(&ds, &path)?;
                println!("{}: {} samples, {} classes -> {}", ds.id(), ds.len(), ds.class_count(), path.display());
            }
            Ok(())
        }
        Command::Pretrain { dataset, config, out } => {
            let mut cfg: PretrainConfig = load_config(config.as_deref(), Some(PretrainConfig::default()), &g.overrides)?;
            if let Some(s) = g.seed {
                cfg.gan.seed = s;
                if let Some(o) = cfg.oracle.as_mut() {
                    o.train.seed = seed::mix(s, 20);
                }
            }
            std::fs::create_dir_all(out)?;
            write_json_atomic(&out.join("pretrain_config.json"), &cfg)?;
            let a = load_dataset(&read_manifest(dataset)?)?;
            let trained = pretrain_gan(&a, &cfg.gan, Some(out))?;
            trained.generator.save(&out.join("generator.ckpt"))?;
            trained.discriminator.save(&out.join("discriminator.ckpt"))?;
            println!("generator {}", trained.generator.meta.content_hash);
            println!("discriminator {}", trained.discriminator.meta.content_hash);
            if let Some(o) = &cfg.oracle {
                let (c, s, _) = a.image_shape();
                let backbone = BackboneSpec {
                    image_size: s,
                    channels: c,
                    width: o.width,
                };
                let (oracle, ckpt, report) = train_feature_oracle(&a, backbone, &o.train)?;
                ckpt.save(&out.join("oracle.ckpt"))?;
                let g = Generator::from_checkpoint(&trained.generator, candle_core::DType::F32, false)?;
                let consistency = class_consistency(&g, &oracle, 512, seed::mix(cfg.gan.seed, 21))?;
                write_json_atomic(
                    &out.join("pretrain_report.json"),
                    &serde_json::json!({
                        "oracle_heldout_class_accuracy": report.heldout_class_accuracy,
                        "generator_class_consistency": consistency,
                    }),
                )?;
                println!("oracle held-out class accuracy {:.3}", report.heldout_class_accuracy);
                println!("generator class consistency {consistency:.3}");
            }
            Ok(())
        }
        Command::TrainClassifier {
            mode,
            a,
            b,
            config,
            out,
        } => {
            let mut cfg: ClassifierCliConfig =
                load_config(config.as_deref(), Some(ClassifierCliConfig::default()), &g.overrides)?;
            if let Some(s) = g.seed {
                cfg.train.seed = s;
            }
            std::fs::create_dir_all(out)?;
            write_json_atomic(&out.join(format!("{mode}_config.json")), &cfg)?;
            let a = load_dataset(&read_manifest(a)?)?;
            let b = load_dataset(&read_manifest(b)?)?;
            let (c, s, _) = a.image_shape();
            let backbone = BackboneSpec {
                image_size: s,
                channels: c,
                width: cfg.width,
            };
            let spec = match mode {
                ClassifierMode::Contrastive => ClassifierSpec::contrastive(a.id(), b.id(), backbone),
                ClassifierMode::Joint => ClassifierSpec::joint(a.id(), b.id(), backbone, cfg.negatives.clone()),
            };
            let trained = train_classifier(&a, &b, &spec, &cfg.train)?;
            let path = out.join(format!("{mode}.ckpt"));
            trained.checkpoint.save(&path)?;
            write_json_atomic(&out.join(format!("{mode}_report.json")), &trained.report)?;
            println!("{}", serde_json::to_string(&trained.report)?);
            println!("{}", path.display());
            Ok(())
        }
        Command::Morph { config, runs_dir } => {
            let mut cfg: MorphRunConfig = load_config(Some(config), None, &g.overrides)?;
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            cfg.deterministic |= g.deterministic;
            let root = runs_dir.clone().unwrap_or_else(default_runs_root);
            let artifacts = run_morph(&cfg, &root, &mut NoSteering)?;
            println!(
                "{} {:?} at iteration {} ({} snapshots)",
                artifacts.run_dir.display(),
                artifacts.final_state,
                artifacts.final_iteration,
                artifacts.snapshots.len()
            );
            Ok(())
        }
        Command::Sweep {
            grid,
            parallel,
            runs_dir,
        } => {
            let mut grid: SweepGrid = load_config(Some(grid), None, &g.overrides)?;
            if let Some(s) = g.seed {
                grid.base.seed = s;
            }
            grid.base.deterministic |= g.deterministic;
            let root = runs_dir.clone().unwrap_or_else(default_runs_root);
            let (index, dir) = run_sweep(&grid, &root, *parallel)?;
            for e in &index.entries {
                println!(
                    "{} lambda=({}, {}) {:?} iter={}",
                    e.run_id, e.lambda_cls, e.lambda_disc, e.state, e.final_iteration
                );
            }
            println!("{}", dir.join("index.json").display());
            let failed = index.entries.iter().filter(|e| e.error.is_some()).count();
            if failed > 0 {
                return Err(config(format!("{failed} of {} sweep runs failed", index.entries.len())));
            }
            Ok(())
        }
        Command::Report { run, compare, runs_dir } => {
            let root = runs_dir.clone().unwrap_or_else(default_runs_root);
            let reports = collect_reports(&root, run)?;
            let layout = RunLayout::new(&root, run);
            let (csv, html) = write_report(&layout.dir, &reports)?;
            println!("{}\n{}", csv.display(), html.display());
            if let Some(other) = compare {
                let theirs = collect_reports(&root, other)?;
                let (joint, contrastive, joint_id) = if run_mode(&root, other)? == Some(ClassifierMode::Joint) {
                    (&theirs, &reports, other)
                } else {
                    (&reports, &theirs, run)
                };
                let mut summaries = Vec::new();
                for j in joint {
                    if let Some(c) = contrastive.iter().find(|c| c.iteration == j.iteration) {
                        summaries.push(compare_modes(j, c)?);
                    }
                }
                if summaries.is_empty() {
                    return Err(Error::Comparison(format!("`{run}` and `{other}` share no evaluated iteration")));
                }
                let path = RunLayout::new(&root, joint_id).dir.join("comparison.json");
                write_json_atomic(&path, &summaries)?;
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Serve { bind, runs_dir } => {
            let root = runs_dir.clone().unwrap_or_else(default_runs_root);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::service::serve(*bind, root))
        }
    }
}

fn run_mode(root: &Path, run: &str) -> Result<Option<ClassifierMode>> {
    let cfg: MorphRunConfig = read_json(&RunLayout::new(root, run).config())?;
    let ckpt = Checkpoint::load(&cfg.classifier_ckpt)?;
    Ok(match ckpt.architecture {
        crate::checkpoint::Architecture::Classifier(spec) => Some(spec.mode),
        _ => None,
    })
}

/// Evaluation reports for every snapshot of `run`, computing missing ones when
/// the run has an oracle configured.
fn collect_reports(root: &Path, run: &str) -> Result<Vec<EvalReport>> {
    let layout = RunLayout::new(root, run);
    let cfg: MorphRunConfig =
        read_json(&layout.config()).map_err(|e| config(format!("run `{run}` under {}: {e}", root.display())))?;
    let mut iterations = layout.snapshot_iterations();
    if layout.eval_report(0).is_file() {
        iterations.insert(0, 0);
    }
    let mut nets: Option<(Classifier, Discriminator, FeatureOracle)> = None;
    let mut out = Vec::new();
    for k in iterations {
        let path = layout.eval_report(k);
        if let Ok(r) = read_json::<EvalReport>(&path) {
            out.push(r);
            continue;
        }
        let Some(oracle_path) = &cfg.eval_oracle_ckpt else {
            continue;
        };
        if nets.is_none() {
            let dtype = candle_core::DType::F32;
            nets = Some((
                Classifier::from_checkpoint(&Checkpoint::load(&cfg.classifier_ckpt)?, dtype, false)?,
                Discriminator::from_checkpoint(&Checkpoint::load(&cfg.discriminator_ckpt)?, dtype, false)?,
                FeatureOracle::from_checkpoint(&Checkpoint::load(oracle_path)?)?,
            ));
        }
        let (c, d, o) = nets.as_ref().expect("networks loaded above");
        let r = evaluate_snapshot_file(&layout.snapshot(k), c, d, o, &EvalConfig::default(), run)?;
        write_json_atomic(&path, &r)?;
        out.push(r);
    }
    if out.is_empty() {
        return Err(config(format!(
            "run `{run}` has no evaluation reports and no eval_oracle_ckpt to compute them"
        )));
    }
    Ok(out)
}
