//! Small functional layer helpers over a [`ParamStore`].

use candle_core::{Tensor, D};

use crate::error::Result;
use crate::params::ParamStore;

pub const LEAKY_SLOPE: f64 = 0.2;

/// `x @ W + b` with `W` stored as `(in, out)`.
pub fn linear(p: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    Ok(x.matmul(w)?.broadcast_add(b)?)
}

pub fn conv2d(p: &ParamStore, prefix: &str, x: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    let y = x.conv2d(w, padding, stride, 1, 1)?;
    Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?)
}

/// Transposed convolution; weight layout `(in, out, k, k)`.
pub fn conv_transpose2d(p: &ParamStore, prefix: &str, x: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    let y = x.conv_transpose2d(w, padding, 0, stride, 1)?;
    Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?)
}

/// Rows of an embedding table.
pub fn embedding(p: &ParamStore, name: &str, ids: &[usize]) -> Result<Tensor> {
    let table = p.get(name)?;
    let idx: Vec<u32> = ids.iter().map(|&i| i as u32).collect();
    let idx = Tensor::from_vec(idx, ids.len(), table.device())?;
    Ok(table.index_select(&idx, 0)?)
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, LEAKY_SLOPE)?)
}

/// Mean cross-entropy of `logits` against integer labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let idx: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    let idx = Tensor::from_vec(idx, labels.len(), logits.device())?;
    let logp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = logp.gather(&idx.unsqueeze(1)?, 1)?;
    Ok(picked.mean_all()?.neg()?)
}

pub fn log2_exact(n: usize) -> Option<usize> {
    if n.is_power_of_two() {
        Some(n.trailing_zeros() as usize)
    } else {
        None
    }
}
