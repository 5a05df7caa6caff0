//! Named parameter sets with deterministic initialization and content hashing.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{contract, Result};
use crate::tensor::{to_f64_vec, BlobRole, TensorBlob};

#[derive(Clone)]
struct Entry {
    tensor: Tensor,
    var: Option<Var>,
}

/// An ordered map of named parameters. Trainable stores back every entry with a
/// [`Var`]; frozen stores hold plain tensors that no gradient can reach.
#[derive(Clone)]
pub struct ParamStore {
    dtype: DType,
    entries: BTreeMap<String, Entry>,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("dtype", &self.dtype)
            .field("names", &self.entries.keys().collect::<Vec<_>>())
            .field("trainable", &self.is_trainable())
            .finish()
    }
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            entries: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<()> {
        let tensor = tensor.to_dtype(self.dtype)?;
        let entry = if trainable {
            let var = Var::from_tensor(&tensor)?;
            Entry {
                tensor: var.as_tensor().clone(),
                var: Some(var),
            }
        } else {
            Entry {
                tensor: tensor.detach(),
                var: None,
            }
        };
        self.entries.insert(name.to_string(), entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| contract(format!("missing parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|e| e.tensor.elem_count()).sum()
    }

    pub fn is_trainable(&self) -> bool {
        !self.entries.is_empty() && self.entries.values().all(|e| e.var.is_some())
    }

    /// Trainable variables in name order.
    pub fn vars(&self) -> Vec<Var> {
        self.entries.values().filter_map(|e| e.var.clone()).collect()
    }

    /// Deep copy with fresh storage.
    pub fn copy(&self, trainable: bool) -> Result<Self> {
        let mut out = Self::new(self.dtype);
        for (name, e) in &self.entries {
            out.insert(name, e.tensor.copy()?, trainable)?;
        }
        Ok(out)
    }

    pub fn to_dtype(&self, dtype: DType, trainable: bool) -> Result<Self> {
        let mut out = Self::new(dtype);
        for (name, e) in &self.entries {
            out.insert(name, e.tensor.to_dtype(dtype)?.copy()?, trainable)?;
        }
        Ok(out)
    }

    /// SHA-256 over a canonical serialization: for each parameter in name order,
    /// the name, the rank and dims, then the values as little-endian bytes of
    /// the store's dtype.
    pub fn content_hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, e) in &self.entries {
            hasher.update((name.len() as u32).to_le_bytes());
            hasher.update(name.as_bytes());
            let dims = e.tensor.dims();
            hasher.update((dims.len() as u32).to_le_bytes());
            for d in dims {
                hasher.update((*d as u64).to_le_bytes());
            }
            let flat = e.tensor.flatten_all()?;
            match self.dtype {
                DType::F64 => {
                    for v in flat.to_vec1::<f64>()? {
                        hasher.update(v.to_le_bytes());
                    }
                }
                _ => {
                    for v in flat.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                        hasher.update(v.to_le_bytes());
                    }
                }
            }
        }
        Ok(hex::encode(hasher.finalize()))
    }

    pub fn to_blobs(&self) -> Result<BTreeMap<String, TensorBlob>> {
        self.entries
            .iter()
            .map(|(n, e)| Ok((n.clone(), TensorBlob::from_tensor(BlobRole::Parameter, &e.tensor)?)))
            .collect()
    }

    pub fn from_blobs(blobs: &BTreeMap<String, TensorBlob>, dtype: DType, trainable: bool) -> Result<Self> {
        let mut out = Self::new(dtype);
        for (name, blob) in blobs {
            out.insert(name, blob.to_tensor(dtype)?, trainable)?;
        }
        Ok(out)
    }

    /// All values concatenated in name order.
    pub fn flatten(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.num_elements());
        for e in self.entries.values() {
            out.extend(to_f64_vec(&e.tensor)?);
        }
        Ok(out)
    }

    /// Overwrites every trainable parameter from a flat vector laid out as in
    /// [`ParamStore::flatten`].
    pub fn assign_flat(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_elements() {
            return Err(contract(format!(
                "assign_flat: {} values for {} parameters",
                values.len(),
                self.num_elements()
            )));
        }
        let mut offset = 0;
        for (name, e) in &self.entries {
            let n = e.tensor.elem_count();
            let var = e
                .var
                .as_ref()
                .ok_or_else(|| contract(format!("assign_flat: `{name}` is frozen")))?;
            let t = Tensor::from_slice(&values[offset..offset + n], e.tensor.dims(), &Device::Cpu)?
                .to_dtype(self.dtype)?;
            var.set(&t)?;
            offset += n;
        }
        Ok(())
    }
}

/// Seeded source of initial parameter values.
pub struct Initializer {
    rng: ChaCha8Rng,
    dtype: DType,
    trainable: bool,
}

impl Initializer {
    pub fn new(seed: u64, dtype: DType, trainable: bool) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            trainable,
        }
    }

    pub fn normal(&mut self, store: &mut ParamStore, name: &str, shape: &[usize], std: f64) -> Result<()> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = StandardNormal.sample(&mut self.rng);
                s * std
            })
            .collect();
        let t = Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        store.insert(name, t, self.trainable)
    }

    pub fn zeros(&mut self, store: &mut ParamStore, name: &str, shape: &[usize]) -> Result<()> {
        let t = Tensor::zeros(shape, self.dtype, &Device::Cpu)?;
        store.insert(name, t, self.trainable)
    }

    /// He-style normal init for a layer with `fan_in` inputs.
    pub fn kaiming(&mut self, store: &mut ParamStore, name: &str, shape: &[usize], fan_in: usize) -> Result<()> {
        self.normal(store, name, shape, (2.0 / fan_in.max(1) as f64).sqrt())
    }

    pub fn new_store(&self) -> ParamStore {
        ParamStore::new(self.dtype)
    }
}

impl ParamStore {
    /// Keeps only parameters whose name satisfies `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.entries.retain(|name, _| keep(name));
    }
}
