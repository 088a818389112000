//! Evaluation of precomputed image and text embeddings.

mod clip;
mod lda;
mod metrics;
pub mod probe;
mod zeroshot;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use clip::{clip_loss, clip_loss_from_similarities, ClipLossConfig};
pub use lda::{lda_direction, LdaResult};
pub use metrics::{
    auroc, kfold_split, mean_std, precision_at_k, precision_at_k_from_distances, render_retrieval_table, retrieval_folds,
    FoldSummary,
};
pub use probe::{train_probe, Objective, PlateauSchedule, ProbeConfig, ProbeFit, ProbeKind, ProbeModel};
pub use zeroshot::{pool_study_scores, BUNDLED_PROMPTS, zero_shot_scores, Prompt, PromptFile, PromptSet, PromptStrategy};

use crate::error::{Error, Result};
use crate::npy::NpyArray;

/// Row-major `n x d` float32 matrix whose rows are named by `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

/// Sidecar JSON describing an embedding NPY file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub ids: Vec<String>,
    pub dim: usize,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub normalizer: Option<String>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value in row `{}`",
                ids[i / dim.max(1)]
            )));
        }
        Ok(EmbeddingMatrix { ids, dim, data })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if ids.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                got: rows.len(),
            });
        }
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        Self::new(ids, dim, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.n())
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// Row for `id`, or a [`Error::MissingId`].
    pub fn row_by_id(&self, id: &str) -> Result<&[f32]> {
        let i = self
            .ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::MissingId(id.to_owned()))?;
        Ok(self.row(i))
    }

    /// Sub-matrix with the given rows, in the given order.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let index = self.index();
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let &i = index.get(id.as_str()).ok_or_else(|| Error::MissingId(id.clone()))?;
            data.extend_from_slice(self.row(i));
        }
        Ok(EmbeddingMatrix {
            ids: ids.to_vec(),
            dim: self.dim,
            data,
        })
    }

    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(self.ids.clone(), self.dim, self.data.iter().map(|x| x * factor).collect())
    }

    /// Reads an `(n, d)` NPY file and its manifest.
    pub fn load(npy: &Path, manifest: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: manifest.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let arr = NpyArray::load(npy)?;
        let [n, d] = arr.shape[..] else {
            return Err(Error::Npy(format!("{}: expected a 2-D array, got shape {:?}", npy.display(), arr.shape)));
        };
        if n != m.ids.len() {
            return Err(Error::DimensionMismatch { expected: m.ids.len(), got: n });
        }
        if d != m.dim {
            return Err(Error::DimensionMismatch { expected: m.dim, got: d });
        }
        Self::new(m.ids, d, arr.to_f32())
    }

    pub fn save(&self, npy: &Path, manifest: &Path, source: Option<&str>, normalizer: Option<&str>) -> Result<()> {
        NpyArray::f32(vec![self.n(), self.dim], self.data.clone())?.save(npy)?;
        let m = Manifest {
            ids: self.ids.clone(),
            dim: self.dim,
            source: source.map(str::to_owned),
            normalizer: normalizer.map(str::to_owned),
        };
        let json = serde_json::to_string_pretty(&m)?;
        std::fs::write(manifest, json + "\n").map_err(|e| Error::io(manifest, e))
    }
}

fn dot<A: Copy + Into<f64>, B: Copy + Into<f64>>(u: &[A], v: &[B]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| a.into() * b.into()).sum()
}

fn norm<A: Copy + Into<f64>>(u: &[A]) -> f64 {
    u.iter().map(|&a| a.into() * a.into()).sum::<f64>().sqrt()
}

/// Cosine similarity, computed in double precision.
pub fn cosine_similarity<A: Copy + Into<f64>, B: Copy + Into<f64>>(u: &[A], v: &[B]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine of a zero vector"));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance<A: Copy + Into<f64>, B: Copy + Into<f64>>(u: &[A], v: &[B]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(u, v)?)
}

/// Mean absolute deviation between predictions and targets.
pub fn mad(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid("mad of empty vectors"));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}
