use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// What a [`TensorBlob`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobRole {
    ImageBatch,
    LatentBatch,
    Parameter,
}

/// Dense host-side float array with shape and role, the interchange form used by
/// checkpoints and by callers that do not want to touch device tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlob {
    pub role: BlobRole,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorBlob {
    pub fn new(role: BlobRole, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(contract(format!(
                "blob shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { role, shape, data })
    }

    pub fn from_tensor(role: BlobRole, t: &Tensor) -> Result<Self> {
        let shape = t.dims().to_vec();
        let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Ok(Self { role, shape, data })
    }

    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, self.shape.as_slice(), &Device::Cpu)?;
        Ok(t.to_dtype(dtype)?)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Little-endian float32 bytes, the on-disk parameter layout.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(role: BlobRole, shape: Vec<usize>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 4 != 0 {
            return Err(contract("float32 blob length is not a multiple of 4"));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(role, shape, data)
    }
}

/// Reads a tensor of any float dtype into f64 values.
pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub fn check_image_batch(images: &Tensor, channels: usize, size: usize, what: &str) -> Result<usize> {
    match images.dims() {
        [n, c, h, w] if *c == channels && *h == size && *w == size => Ok(*n),
        dims => Err(contract(format!(
            "{what}: expected image batch (n, {channels}, {size}, {size}), got {dims:?}"
        ))),
    }
}
