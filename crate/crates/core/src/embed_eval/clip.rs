use serde::{Deserialize, Serialize};

use super::{cosine_similarity, EmbeddingMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipLossConfig {
    pub temperature: f64,
}

impl Default for ClipLossConfig {
    fn default() -> Self {
        ClipLossConfig { temperature: 0.07 }
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Symmetric cross-entropy over the temperature-scaled similarity matrix
/// `sim` (row-major `n x n`), with matching pairs on the diagonal.
pub fn clip_loss_from_similarities(sim: &[f64], n: usize, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    if n == 0 {
        return Err(Error::invalid("CLIP loss needs at least one pair"));
    }
    if sim.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            got: sim.len(),
        });
    }
    let logit = |i: usize, j: usize| sim[i * n + j] / temperature;
    let mut rows = 0.0;
    let mut cols = 0.0;
    for i in 0..n {
        rows += log_sum_exp((0..n).map(|j| logit(i, j))) - logit(i, i);
        cols += log_sum_exp((0..n).map(|j| logit(j, i))) - logit(i, i);
    }
    Ok(0.5 * (rows + cols) / n as f64)
}

/// CLIP loss between matched image and text embeddings, using cosine
/// similarity.
pub fn clip_loss(img: &EmbeddingMatrix, txt: &EmbeddingMatrix, cfg: &ClipLossConfig) -> Result<f64> {
    if img.n() != txt.n() {
        return Err(Error::DimensionMismatch {
            expected: img.n(),
            got: txt.n(),
        });
    }
    if img.dim() != txt.dim() {
        return Err(Error::DimensionMismatch {
            expected: img.dim(),
            got: txt.dim(),
        });
    }
    let n = img.n();
    let mut sim = Vec::with_capacity(n * n);
    for a in img.rows() {
        for b in txt.rows() {
            sim.push(cosine_similarity(a, b)?);
        }
    }
    clip_loss_from_similarities(&sim, n, cfg.temperature)
}
