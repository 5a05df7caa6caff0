//! Dataset slots A (base distribution) and B (target features): specs, loading,
//! stand-in pair construction, and deterministic batching.

pub mod access;
mod directory;
pub mod synthetic;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Result};
use crate::fsutil::{read_json, write_json_atomic};
use crate::seed;
pub use synthetic::StandInStyle;

pub const DEFAULT_SYNTHETIC_SAMPLES: usize = 4000;
pub const MIN_STAND_IN_BASE: usize = 2000;
/// Minimum decodable images for a directory source: two batches of the default size.
pub const DEFAULT_MIN_SAMPLES: usize = 2 * crate::DEFAULT_BATCH_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    Directory,
    SyntheticShapes,
    SyntheticRecolor,
    StandardToy,
}

/// Which slice of a shuffled base id range a dataset covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub part: usize,
    pub of: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub id: String,
    pub source: DatasetSource,
    pub image_size: usize,
    pub channels: usize,
    pub class_count: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Partition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<StandInStyle>,
}

impl DatasetSpec {
    /// The procedurally drawn ten-style shapes set.
    pub fn synthetic_shapes(id: &str, image_size: usize, channels: usize, seed: u64) -> Self {
        Self {
            id: id.into(),
            source: DatasetSource::SyntheticShapes,
            image_size,
            channels,
            class_count: synthetic::SHAPE_CLASSES,
            seed,
            sample_count: Some(DEFAULT_SYNTHETIC_SAMPLES),
            path: None,
            partition: None,
            transform: None,
        }
    }

    pub fn directory(id: &str, path: impl Into<PathBuf>, image_size: usize, channels: usize, class_count: usize) -> Self {
        Self {
            id: id.into(),
            source: DatasetSource::Directory,
            image_size,
            channels,
            class_count,
            seed: 0,
            sample_count: None,
            path: Some(path.into()),
            partition: None,
            transform: None,
        }
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.sample_count = Some(n);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(config("dataset id must not be empty"));
        }
        if ![16, 32, 64].contains(&self.image_size) {
            return Err(config(format!("image_size {} not in {{16, 32, 64}}", self.image_size)));
        }
        if ![1, 3].contains(&self.channels) {
            return Err(config(format!("channels {} not in {{1, 3}}", self.channels)));
        }
        if self.class_count == 0 {
            return Err(config("class_count must be at least 1"));
        }
        if matches!(self.source, DatasetSource::SyntheticShapes | DatasetSource::SyntheticRecolor)
            && self.class_count > synthetic::SHAPE_CLASSES
        {
            return Err(config(format!(
                "synthetic shapes provide at most {} classes",
                synthetic::SHAPE_CLASSES
            )));
        }
        if let Some(p) = self.partition {
            if p.of == 0 || p.part >= p.of {
                return Err(config(format!("invalid partition {}/{}", p.part, p.of)));
            }
        }
        Ok(())
    }

    fn base_count(&self) -> Result<usize> {
        match self.source {
            DatasetSource::Directory => Ok(directory::list(self)?.files.len()),
            _ => Ok(self.sample_count.unwrap_or(DEFAULT_SYNTHETIC_SAMPLES)),
        }
    }

    /// Base sample ids this spec covers, after partitioning.
    fn covered_ids(&self, base_count: usize) -> Vec<u64> {
        let ids: Vec<u64> = (0..base_count as u64).collect();
        match self.partition {
            None => ids,
            Some(p) => {
                let mut perm = ids;
                let mut rng = ChaCha8Rng::seed_from_u64(seed::derive("partition", &[self.seed, base_count as u64]));
                perm.shuffle(&mut rng);
                let lo = p.part * base_count / p.of;
                let hi = (p.part + 1) * base_count / p.of;
                let mut part = perm[lo..hi].to_vec();
                part.sort_unstable();
                part
            }
        }
    }
}

/// Writes a dataset manifest; `sample_count` is filled in from the loaded data.
pub fn write_manifest(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut spec = dataset.spec().clone();
    if spec.partition.is_none() {
        spec.sample_count = Some(dataset.len());
    }
    write_json_atomic(path, &spec)
}

/// Reads a manifest; a relative directory `path` resolves against the manifest's folder.
pub fn read_manifest(path: &Path) -> Result<DatasetSpec> {
    let mut spec: DatasetSpec =
        read_json(path).map_err(|e| config(format!("dataset manifest {}: {e}", path.display())))?;
    if let (Some(p), Some(dir)) = (spec.path.as_ref(), path.parent()) {
        if p.is_relative() {
            spec.path = Some(dir.join(p));
        }
    }
    Ok(spec)
}

struct Store {
    sample_ids: Vec<u64>,
    labels: Vec<usize>,
    pixels: Vec<f32>,
    dim: usize,
}

/// Immutable, cheaply clonable handle over decoded samples normalized to `[-1, 1]`.
#[derive(Clone)]
pub struct Dataset {
    spec: DatasetSpec,
    store: Arc<Store>,
    indices: Arc<Vec<usize>>,
    warnings: Arc<Vec<String>>,
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("id", &self.spec.id)
            .field("len", &self.len())
            .finish()
    }
}

/// One materialized batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub sample_ids: Vec<u64>,
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    load_dataset_with_min(spec, DEFAULT_MIN_SAMPLES)
}

/// Like [`load_dataset`], requiring at least `min_samples` usable samples.
pub fn load_dataset_with_min(spec: &DatasetSpec, min_samples: usize) -> Result<Dataset> {
    spec.validate()?;
    access::record(format!("load {}", spec.id));
    let size = spec.image_size;
    let dim = spec.channels * size * size;
    let mut warnings = Vec::new();

    let (sample_ids, labels, pixels) = match spec.source {
        DatasetSource::Directory => {
            let listing = directory::list(spec)?;
            let ids = spec.covered_ids(listing.files.len());
            let mut keep_ids = Vec::with_capacity(ids.len());
            let mut labels = Vec::with_capacity(ids.len());
            let mut pixels = Vec::with_capacity(ids.len() * dim);
            for id in ids {
                let (file, label) = &listing.files[id as usize];
                match directory::decode(file, size) {
                    Ok(mut rgb) => {
                        finish_sample(spec, id, &mut rgb, &mut pixels);
                        keep_ids.push(id);
                        labels.push(*label);
                    }
                    Err(e) => {
                        let msg = format!("skipping {}: {e}", file.display());
                        log::warn!("{msg}");
                        warnings.push(msg);
                    }
                }
            }
            (keep_ids, labels, pixels)
        }
        source => {
            let n = spec.sample_count.unwrap_or(DEFAULT_SYNTHETIC_SAMPLES);
            let ids = spec.covered_ids(n);
            let mut labels = Vec::with_capacity(ids.len());
            let mut pixels = Vec::with_capacity(ids.len() * dim);
            for &id in &ids {
                let class = (id % spec.class_count as u64) as usize;
                let mut rgb = match source {
                    DatasetSource::StandardToy => synthetic::draw_grating(spec.seed, id, class, spec.class_count, size),
                    _ => synthetic::draw_shape(spec.seed, id, class, size),
                };
                if source == DatasetSource::SyntheticRecolor {
                    synthetic::apply_style(StandInStyle::Recolor, spec.seed, id, &mut rgb, size);
                }
                finish_sample(spec, id, &mut rgb, &mut pixels);
                labels.push(class);
            }
            (ids, labels, pixels)
        }
    };

    if sample_ids.is_empty() {
        return Err(config(format!("dataset `{}` contains no usable images", spec.id)));
    }
    if sample_ids.len() < min_samples {
        return Err(config(format!(
            "dataset `{}` has {} usable images, need at least {min_samples}",
            spec.id,
            sample_ids.len()
        )));
    }
    let n = sample_ids.len();
    Ok(Dataset {
        spec: spec.clone(),
        store: Arc::new(Store {
            sample_ids,
            labels,
            pixels,
            dim,
        }),
        indices: Arc::new((0..n).collect()),
        warnings: Arc::new(warnings),
    })
}

/// Applies the spec's transform, channel reduction and `[-1, 1]` normalization.
fn finish_sample(spec: &DatasetSpec, id: u64, rgb: &mut [f32], out: &mut Vec<f32>) {
    let size = spec.image_size;
    let style = spec.transform;
    if let Some(s) = style.filter(|s| *s != StandInStyle::Invert) {
        synthetic::apply_style(s, spec.seed, id, rgb, size);
    }
    let mut img = if spec.channels == 1 {
        synthetic::to_gray(rgb, size)
    } else {
        rgb.to_vec()
    };
    if style == Some(StandInStyle::Invert) {
        synthetic::apply_style(StandInStyle::Invert, spec.seed, id, &mut img, size);
    }
    out.extend(img.iter().map(|v| (v.clamp(0.0, 1.0) * 2.0 - 1.0).clamp(-1.0, 1.0)));
}

/// Splits a base spec into a disjoint pair: A keeps the first half of a seeded
/// shuffle of the base ids untouched, B transforms the second half with `style`.
pub fn make_stand_in_pair(style: StandInStyle, base: &DatasetSpec) -> Result<(DatasetSpec, DatasetSpec)> {
    base.validate()?;
    if base.partition.is_some() || base.transform.is_some() {
        return Err(config("stand-in base must be an untransformed, unpartitioned dataset"));
    }
    let n = base.base_count()?;
    if n < MIN_STAND_IN_BASE {
        return Err(config(format!(
            "stand-in base `{}` has {n} samples, need at least {MIN_STAND_IN_BASE}",
            base.id
        )));
    }
    let mut a = base.clone();
    a.id = format!("{}-a", base.id);
    a.sample_count = Some(n);
    a.partition = Some(Partition { part: 0, of: 2 });
    let mut b = a.clone();
    b.id = format!("{}-b-{}", base.id, style_name(style));
    b.partition = Some(Partition { part: 1, of: 2 });
    b.transform = Some(style);
    Ok((a, b))
}

pub fn style_name(style: StandInStyle) -> &'static str {
    match style {
        StandInStyle::Recolor => "recolor",
        StandInStyle::Texture => "texture",
        StandInStyle::Invert => "invert",
    }
}

impl Dataset {
    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.spec.class_count
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.spec.channels, self.spec.image_size, self.spec.image_size)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn sample_ids(&self) -> Vec<u64> {
        self.indices.iter().map(|&i| self.store.sample_ids[i]).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.indices.iter().map(|&i| self.store.labels[i]).collect()
    }

    pub fn label(&self, i: usize) -> usize {
        self.store.labels[self.indices[i]]
    }

    /// Pixels of sample `i` (position within this handle), channel-major.
    pub fn image(&self, i: usize) -> &[f32] {
        access::record(format!("{}[{i}]", self.spec.id));
        let k = self.indices[i];
        &self.store.pixels[k * self.store.dim..(k + 1) * self.store.dim]
    }

    pub fn batch(&self, positions: &[usize]) -> Result<Batch> {
        access::record(format!("{} batch of {}", self.spec.id, positions.len()));
        let dim = self.store.dim;
        let mut data = Vec::with_capacity(positions.len() * dim);
        let mut labels = Vec::with_capacity(positions.len());
        let mut ids = Vec::with_capacity(positions.len());
        for &p in positions {
            let k = *self
                .indices
                .get(p)
                .ok_or_else(|| contract(format!("sample {p} out of range for `{}`", self.spec.id)))?;
            data.extend_from_slice(&self.store.pixels[k * dim..(k + 1) * dim]);
            labels.push(self.store.labels[k]);
            ids.push(self.store.sample_ids[k]);
        }
        let (c, h, w) = self.image_shape();
        let images = Tensor::from_vec(data, (positions.len(), c, h, w), &Device::Cpu)?;
        Ok(Batch {
            images,
            labels,
            sample_ids: ids,
        })
    }

    /// Deterministic split into `(train, holdout)`; the holdout takes
    /// `ceil(fraction * len)` samples chosen by a shuffle keyed on the dataset id.
    pub fn split_holdout(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(config(format!("holdout fraction {fraction} outside [0, 1)")));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(&format!("holdout/{}", self.spec.id), &[self.spec.seed]));
        order.shuffle(&mut rng);
        let k = ((self.len() as f64) * fraction).ceil() as usize;
        let mut hold = order[..k].to_vec();
        let mut train = order[k..].to_vec();
        hold.sort_unstable();
        train.sort_unstable();
        Ok((self.subset(&train), self.subset(&hold)))
    }

    /// View over the given positions of this handle.
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        Dataset {
            spec: self.spec.clone(),
            store: Arc::clone(&self.store),
            indices: Arc::new(positions.iter().map(|&p| self.indices[p]).collect()),
            warnings: Arc::clone(&self.warnings),
        }
    }

    /// One epoch of batches whose order depends only on (id, shuffle_seed, epoch).
    pub fn batches(&self, batch_size: usize, shuffle_seed: u64, epoch: u64) -> BatchIterator {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(&format!("batches/{}", self.spec.id), &[shuffle_seed, epoch]));
        order.shuffle(&mut rng);
        BatchIterator {
            dataset: self.clone(),
            order,
            batch_size: batch_size.max(1),
            pos: 0,
        }
    }
}

/// Single-consumer iterator over one epoch; only the final batch may be short.
pub struct BatchIterator {
    dataset: Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIterator {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let positions = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(self.dataset.batch(&positions))
    }
}

/// Endless stream of full batches cycling through reshuffled epochs.
pub struct EpochSampler {
    dataset: Dataset,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: u64,
    current: BatchIterator,
}

impl EpochSampler {
    pub fn new(dataset: &Dataset, batch_size: usize, shuffle_seed: u64) -> Result<Self> {
        if dataset.len() < batch_size {
            return Err(config(format!(
                "dataset `{}` has {} samples, fewer than one batch of {batch_size}",
                dataset.id(),
                dataset.len()
            )));
        }
        Ok(Self {
            dataset: dataset.clone(),
            batch_size,
            shuffle_seed,
            epoch: 0,
            current: dataset.batches(batch_size, shuffle_seed, 0),
        })
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        loop {
            match self.current.next() {
                Some(Ok(b)) if b.labels.len() == self.batch_size => return Ok(b),
                Some(Err(e)) => return Err(e),
                Some(Ok(_)) | None => {
                    self.epoch += 1;
                    self.current = self.dataset.batches(self.batch_size, self.shuffle_seed, self.epoch);
                }
            }
        }
    }
}
