//! Checkpoint archives: a tar file holding `manifest.json` plus one raw
//! little-endian float32 blob per named parameter under `params/`.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use candle_core::DType;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierSpec, OracleSpec};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::gan::{DiscriminatorSpec, GeneratorSpec};
use crate::params::ParamStore;
use crate::tensor::{BlobRole, TensorBlob};

pub const FORMAT: &str = "distmorph-ckpt/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Generator(GeneratorSpec),
    Discriminator(DiscriminatorSpec),
    Classifier(ClassifierSpec),
    FeatureOracle(OracleSpec),
}

impl Architecture {
    pub fn kind(&self) -> &'static str {
        match self {
            Architecture::Generator(_) => "generator",
            Architecture::Discriminator(_) => "discriminator",
            Architecture::Classifier(_) => "classifier",
            Architecture::FeatureOracle(_) => "feature_oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub iterations: u64,
    pub dataset_ids: Vec<String>,
    pub seed: u64,
    pub created_at: DateTime<Utc>,
    pub content_hash: String,
    /// Producer-specific provenance (held-out metrics, run id, ...).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
    dtype: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    architecture: Architecture,
    parameters: Vec<ParamEntry>,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub parameters: BTreeMap<String, TensorBlob>,
    pub meta: CheckpointMeta,
}

/// Provenance supplied when a checkpoint is created from live parameters.
#[derive(Debug, Clone, Default)]
pub struct Provenance {
    pub iterations: u64,
    pub dataset_ids: Vec<String>,
    pub seed: u64,
    pub extra: serde_json::Value,
}

impl Checkpoint {
    pub fn from_store(architecture: Architecture, params: &ParamStore, prov: Provenance) -> Result<Self> {
        // Hash the float32 form so the value survives a save/load round trip.
        let f32_params = if params.dtype() == DType::F32 {
            params.clone()
        } else {
            params.to_dtype(DType::F32, false)?
        };
        let content_hash = f32_params.content_hash()?;
        Ok(Self {
            architecture,
            parameters: f32_params.to_blobs()?,
            meta: CheckpointMeta {
                iterations: prov.iterations,
                dataset_ids: prov.dataset_ids,
                seed: prov.seed,
                created_at: Utc::now(),
                content_hash,
                extra: prov.extra,
            },
        })
    }

    pub fn to_store(&self, dtype: DType, trainable: bool) -> Result<ParamStore> {
        ParamStore::from_blobs(&self.parameters, dtype, trainable)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let parameters = self
            .parameters
            .iter()
            .map(|(name, blob)| ParamEntry {
                name: name.clone(),
                shape: blob.shape.clone(),
                file: format!("params/{name}.f32"),
                dtype: "f32le".into(),
            })
            .collect::<Vec<_>>();
        let manifest = Manifest {
            format: FORMAT.into(),
            architecture: self.architecture.clone(),
            parameters: parameters.clone(),
            meta: self.meta.clone(),
        };
        let mut builder = tar::Builder::new(Vec::new());
        append_entry(&mut builder, "manifest.json", &serde_json::to_vec_pretty(&manifest)?)?;
        for entry in &parameters {
            append_entry(&mut builder, &entry.file, &self.parameters[&entry.name].to_le_bytes())?;
        }
        Ok(builder.into_inner()?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| ckpt_err(path, format!("cannot read: {e}")))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint { reason, .. } => ckpt_err(path, reason),
            other => ckpt_err(path, other.to_string()),
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let here = PathBuf::from("<memory>");
        let mut archive = tar::Archive::new(bytes);
        let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for entry in archive.entries()? {
            let mut entry = entry?;
            let name = entry.path()?.to_string_lossy().into_owned();
            let mut buf = Vec::new();
            entry.read_to_end(&mut buf)?;
            files.insert(name, buf);
        }
        let manifest: Manifest = serde_json::from_slice(
            files
                .get("manifest.json")
                .ok_or_else(|| ckpt_err(&here, "archive has no manifest.json"))?,
        )?;
        if manifest.format != FORMAT {
            return Err(ckpt_err(&here, format!("unsupported format `{}`", manifest.format)));
        }
        let mut parameters = BTreeMap::new();
        for p in &manifest.parameters {
            let raw = files
                .get(&p.file)
                .ok_or_else(|| ckpt_err(&here, format!("missing blob {}", p.file)))?;
            let blob = TensorBlob::from_le_bytes(BlobRole::Parameter, p.shape.clone(), raw)?;
            parameters.insert(p.name.clone(), blob);
        }
        let ckpt = Self {
            architecture: manifest.architecture,
            parameters,
            meta: manifest.meta,
        };
        let actual = ckpt.to_store(DType::F32, false)?.content_hash()?;
        if actual != ckpt.meta.content_hash {
            return Err(ckpt_err(
                &here,
                format!("content hash mismatch: manifest {} vs data {actual}", ckpt.meta.content_hash),
            ));
        }
        Ok(ckpt)
    }
}

fn append_entry(builder: &mut tar::Builder<Vec<u8>>, name: &str, data: &[u8]) -> Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(data.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_cksum();
    builder.append_data(&mut header, name, data)?;
    Ok(())
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}
