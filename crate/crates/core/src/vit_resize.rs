//! Weight surgery for running a ViT at a new resolution: bilinear
//! interpolation of position embeddings and pseudoinverse resizing of the
//! patch-embedding kernel.
//!
//! Both use corner-aligned bilinear sampling: output index `i` of `m` maps to
//! input coordinate `i * (n - 1) / (m - 1)`, and a single output sample reads
//! input index 0.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npy::{NpyArray, NpyData};

/// Nonzero taps `(input index, weight)` for each output sample.
fn taps(n_old: usize, n_new: usize) -> Vec<Vec<(usize, f64)>> {
    (0..n_new)
        .map(|i| {
            if n_new == 1 || n_old == 1 {
                return vec![(0, 1.0)];
            }
            let num = i * (n_old - 1);
            let den = n_new - 1;
            let lo = num / den;
            let rem = num % den;
            if rem == 0 {
                vec![(lo, 1.0)]
            } else {
                let t = rem as f64 / den as f64;
                vec![(lo, 1.0 - t), (lo + 1, t)]
            }
        })
        .collect()
}

/// Dense `n_new x n_old` 1-D interpolation matrix.
fn interp_matrix(n_old: usize, n_new: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n_new, n_old);
    for (i, row) in taps(n_old, n_new).into_iter().enumerate() {
        for (j, w) in row {
            m[(i, j)] = w;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionEmbedding {
    pub cls: Option<Vec<f64>>,
    pub h: usize,
    pub w: usize,
    pub dim: usize,
    /// Row-major `h x w x dim`.
    pub grid: Vec<f64>,
}

impl PositionEmbedding {
    pub fn new(cls: Option<Vec<f64>>, h: usize, w: usize, dim: usize, grid: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::invalid("position grid must be at least 1x1"));
        }
        if grid.len() != h * w * dim {
            return Err(Error::DimensionMismatch {
                expected: h * w * dim,
                got: grid.len(),
            });
        }
        if let Some(c) = &cls {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.len(),
                });
            }
        }
        if grid.iter().chain(cls.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite position embedding value"));
        }
        Ok(PositionEmbedding { cls, h, w, dim, grid })
    }

    pub fn at(&self, y: usize, x: usize) -> &[f64] {
        let o = (y * self.w + x) * self.dim;
        &self.grid[o..o + self.dim]
    }

    /// Reads a `(1, tokens, d)` or `(tokens, d)` tensor holding a square grid,
    /// optionally preceded by a class token.
    pub fn from_tokens(shape: &[usize], data: Vec<f64>, has_cls: bool) -> Result<Self> {
        let (tokens, dim) = match *shape {
            [1, t, d] | [t, d] => (t, d),
            _ => return Err(Error::invalid(format!("position embedding shape {shape:?} is not (1, tokens, d)"))),
        };
        let grid_tokens = tokens
            .checked_sub(has_cls as usize)
            .ok_or_else(|| Error::invalid("position embedding has no tokens"))?;
        let side = (grid_tokens as f64).sqrt().round() as usize;
        if side * side != grid_tokens {
            return Err(Error::invalid(format!("{grid_tokens} grid tokens do not form a square")));
        }
        let (cls, grid) = if has_cls {
            (Some(data[..dim].to_vec()), data[dim..].to_vec())
        } else {
            (None, data)
        };
        Self::new(cls, side, side, dim, grid)
    }

    /// Flattened tokens, class token first when present.
    pub fn to_tokens(&self) -> Vec<f64> {
        let mut out = self.cls.clone().unwrap_or_default();
        out.extend_from_slice(&self.grid);
        out
    }

    pub fn token_count(&self) -> usize {
        self.h * self.w + self.cls.is_some() as usize
    }
}

/// Bilinear, corner-aligned resize of the position grid; the class token is
/// copied unchanged.
pub fn interpolate_pos_embed(pe: &PositionEmbedding, new_h: usize, new_w: usize) -> Result<PositionEmbedding> {
    if new_h == 0 || new_w == 0 {
        return Err(Error::invalid("target grid must be at least 1x1"));
    }
    let ty = taps(pe.h, new_h);
    let tx = taps(pe.w, new_w);
    let d = pe.dim;
    let mut grid = vec![0.0; new_h * new_w * d];
    grid.par_chunks_mut(new_w * d).enumerate().for_each(|(i, out_row)| {
        for (j, out) in out_row.chunks_mut(d).enumerate() {
            let mut first = true;
            for &(yi, wy) in &ty[i] {
                for &(xj, wx) in &tx[j] {
                    let src = pe.at(yi, xj);
                    let w = wy * wx;
                    for (o, &s) in out.iter_mut().zip(src) {
                        // start from the first product so a single unit tap copies bits exactly
                        *o = if first { s * w } else { *o + s * w };
                    }
                    first = false;
                }
            }
        }
    });
    PositionEmbedding::new(pe.cls.clone(), new_h, new_w, d, grid)
}

/// Matrix `B` of shape `(p_new^2, p_old^2)` mapping a flattened row-major
/// `p_old x p_old` patch to its bilinear resize.
pub fn build_resize_matrix(p_old: usize, p_new: usize) -> Result<DMatrix<f64>> {
    if p_old == 0 || p_new == 0 {
        return Err(Error::invalid("patch sizes must be at least 1"));
    }
    let r = interp_matrix(p_old, p_new);
    Ok(r.kronecker(&r))
}

/// Moore-Penrose pseudoinverse through SVD, dropping singular values below
/// `1e-10 * sigma_max`.
pub fn pseudoinverse(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = b.clone().try_svd(true, true, f64::EPSILON, 10_000).ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let smax = svd.singular_values.max();
    let cutoff = 1e-10 * smax;
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let inv = DVector::from_iterator(
        svd.singular_values.len(),
        svd.singular_values.iter().map(|&s| if s > cutoff { 1.0 / s } else { 0.0 }),
    );
    Ok(vt.transpose() * DMatrix::from_diagonal(&inv) * u.transpose())
}

/// Channel order of a patch kernel tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelLayout {
    /// out, in, height, width (PyTorch convolution).
    #[serde(rename = "OIHW")]
    Oihw,
    /// out, height, width, in.
    #[serde(rename = "OHWI")]
    Ohwi,
}

impl std::str::FromStr for KernelLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "OIHW" => Ok(KernelLayout::Oihw),
            "OHWI" => Ok(KernelLayout::Ohwi),
            other => Err(Error::invalid(format!("unknown kernel layout `{other}`"))),
        }
    }
}

/// Square patch kernel stored as out x p x p x in.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub p: usize,
    pub data: Vec<f64>,
}

impl PatchKernel {
    pub fn new(out_channels: usize, p: usize, in_channels: usize, data: Vec<f64>) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("patch size must be at least 1"));
        }
        let expected = out_channels * p * p * in_channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite kernel value"));
        }
        Ok(PatchKernel {
            out_channels,
            in_channels,
            p,
            data,
        })
    }

    fn idx(&self, o: usize, y: usize, x: usize, i: usize) -> usize {
        ((o * self.p + y) * self.p + x) * self.in_channels + i
    }

    pub fn from_layout(shape: &[usize], data: Vec<f64>, layout: KernelLayout) -> Result<Self> {
        let &[a, b, c, d] = shape else {
            return Err(Error::invalid(format!("kernel shape {shape:?} is not 4-D")));
        };
        match layout {
            KernelLayout::Ohwi => {
                if b != c {
                    return Err(Error::invalid(format!("kernel {b}x{c} is not square")));
                }
                Self::new(a, b, d, data)
            }
            KernelLayout::Oihw => {
                if c != d {
                    return Err(Error::invalid(format!("kernel {c}x{d} is not square")));
                }
                let (o_n, i_n, p) = (a, b, c);
                if data.len() != o_n * i_n * p * p {
                    return Err(Error::DimensionMismatch {
                        expected: o_n * i_n * p * p,
                        got: data.len(),
                    });
                }
                let mut out = vec![0.0; data.len()];
                for o in 0..o_n {
                    for i in 0..i_n {
                        for y in 0..p {
                            for x in 0..p {
                                out[((o * p + y) * p + x) * i_n + i] = data[((o * i_n + i) * p + y) * p + x];
                            }
                        }
                    }
                }
                Self::new(o_n, p, i_n, out)
            }
        }
    }

    pub fn shape(&self, layout: KernelLayout) -> Vec<usize> {
        match layout {
            KernelLayout::Ohwi => vec![self.out_channels, self.p, self.p, self.in_channels],
            KernelLayout::Oihw => vec![self.out_channels, self.in_channels, self.p, self.p],
        }
    }

    pub fn to_layout(&self, layout: KernelLayout) -> Vec<f64> {
        match layout {
            KernelLayout::Ohwi => self.data.clone(),
            KernelLayout::Oihw => {
                let mut out = Vec::with_capacity(self.data.len());
                for o in 0..self.out_channels {
                    for i in 0..self.in_channels {
                        for y in 0..self.p {
                            for x in 0..self.p {
                                out.push(self.data[self.idx(o, y, x, i)]);
                            }
                        }
                    }
                }
                out
            }
        }
    }

    /// Flattened `p x p` slice for one (out, in) channel pair.
    pub fn slice(&self, o: usize, i: usize) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.p * self.p);
        for y in 0..self.p {
            for x in 0..self.p {
                s.push(self.data[self.idx(o, y, x, i)]);
            }
        }
        s
    }
}

/// Resizes every `(out, in)` slice `w` to `pinv(B)^T w`, so that a kernel
/// applied to an upsampled patch sees the same token as the original kernel
/// on the original patch.
pub fn pseudoinverse_patch_resize(k: &PatchKernel, p_new: usize) -> Result<PatchKernel> {
    let b = build_resize_matrix(k.p, p_new)?;
    let map = if k.p == p_new {
        DMatrix::identity(p_new * p_new, p_new * p_new)
    } else {
        pseudoinverse(&b)?.transpose()
    };
    let (o_n, i_n) = (k.out_channels, k.in_channels);
    let block = p_new * p_new * i_n;
    let mut data = vec![0.0; o_n * block];
    data.par_chunks_mut(block.max(1)).enumerate().for_each(|(o, out)| {
        for i in 0..i_n {
            let w = DVector::from_vec(k.slice(o, i));
            let resized = &map * w;
            for (pos, v) in resized.iter().enumerate() {
                out[pos * i_n + i] = *v;
            }
        }
    });
    PatchKernel::new(o_n, p_new, i_n, data)
}

/// Entry of a weight bundle's `index.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub file: String,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub layout: Option<String>,
}

/// Directory of named NPY tensors described by `index.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub dir: PathBuf,
    pub index: IndexMap<String, TensorEntry>,
}

pub const INDEX_FILE: &str = "index.json";

impl WeightBundle {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: IndexMap<String, TensorEntry> = serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(WeightBundle {
            dir: dir.to_path_buf(),
            index,
        })
    }

    pub fn entry(&self, name: &str) -> Result<&TensorEntry> {
        self.index.get(name).ok_or_else(|| Error::MissingId(name.to_owned()))
    }

    pub fn read(&self, name: &str) -> Result<NpyArray> {
        let entry = self.entry(name)?;
        let arr = NpyArray::load(&self.dir.join(&entry.file))?;
        if arr.shape != entry.shape {
            return Err(Error::invalid(format!(
                "tensor `{name}` has shape {:?} but the index says {:?}",
                arr.shape, entry.shape
            )));
        }
        Ok(arr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResizeRequest {
    pub pos_embed: String,
    pub patch_embed: String,
    /// New position grid `(h, w)`.
    pub grid: Option<(usize, usize)>,
    pub patch: Option<usize>,
}

impl Default for ResizeRequest {
    fn default() -> Self {
        ResizeRequest {
            pos_embed: "pos_embed".into(),
            patch_embed: "patch_embed.weight".into(),
            grid: None,
            patch: None,
        }
    }
}

/// One planned change, reported by dry runs and written to the output index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResizeAction {
    pub tensor: String,
    pub from: Vec<usize>,
    pub to: Vec<usize>,
}

/// Same element type as `like`.
fn array_like(like: &NpyArray, shape: Vec<usize>, data: Vec<f64>) -> Result<NpyArray> {
    match like.data {
        NpyData::F32(_) => NpyArray::f32(shape, data.into_iter().map(|v| v as f32).collect()),
        NpyData::F64(_) => NpyArray::f64(shape, data),
    }
}

/// Resized tensors for `req`, keyed by tensor name, with the actions taken.
pub fn plan_resize(bundle: &WeightBundle, req: &ResizeRequest) -> Result<(IndexMap<String, NpyArray>, Vec<ResizeAction>)> {
    let mut out = IndexMap::new();
    let mut actions = Vec::new();
    if let Some((h, w)) = req.grid {
        let entry = bundle.entry(&req.pos_embed)?;
        let arr = bundle.read(&req.pos_embed)?;
        let has_cls = match entry.layout.as_deref() {
            None | Some("cls+grid") => true,
            Some("grid") => false,
            Some(other) => return Err(Error::invalid(format!("unknown position layout `{other}`"))),
        };
        let pe = PositionEmbedding::from_tokens(&arr.shape, arr.to_f64(), has_cls)?;
        let resized = interpolate_pos_embed(&pe, h, w)?;
        let mut shape = arr.shape.clone();
        let n = shape.len();
        shape[n - 2] = resized.token_count();
        actions.push(ResizeAction {
            tensor: req.pos_embed.clone(),
            from: arr.shape.clone(),
            to: shape.clone(),
        });
        out.insert(req.pos_embed.clone(), array_like(&arr, shape, resized.to_tokens())?);
    }
    if let Some(p) = req.patch {
        let entry = bundle.entry(&req.patch_embed)?;
        let layout: KernelLayout = entry.layout.as_deref().unwrap_or("OIHW").parse()?;
        let arr = bundle.read(&req.patch_embed)?;
        let kernel = PatchKernel::from_layout(&arr.shape, arr.to_f64(), layout)?;
        let resized = pseudoinverse_patch_resize(&kernel, p)?;
        let shape = resized.shape(layout);
        actions.push(ResizeAction {
            tensor: req.patch_embed.clone(),
            from: arr.shape.clone(),
            to: shape.clone(),
        });
        out.insert(req.patch_embed.clone(), array_like(&arr, shape, resized.to_layout(layout))?);
    }
    Ok((out, actions))
}

/// Writes a new bundle to `out_dir`: resized tensors replaced, every other
/// tensor copied byte for byte.
pub fn resize_bundle(bundle: &WeightBundle, req: &ResizeRequest, out_dir: &Path) -> Result<Vec<ResizeAction>> {
    let (resized, actions) = plan_resize(bundle, req)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut index = IndexMap::new();
    for (name, entry) in &bundle.index {
        let target = out_dir.join(&entry.file);
        let mut entry = entry.clone();
        if let Some(arr) = resized.get(name) {
            arr.save(&target)?;
            entry.shape = arr.shape.clone();
        } else {
            let src = bundle.dir.join(&entry.file);
            fs::copy(&src, &target).map_err(|e| Error::io(&src, e))?;
        }
        index.insert(name.clone(), entry);
    }
    let path = out_dir.join(INDEX_FILE);
    fs::write(&path, serde_json::to_string_pretty(&index)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(actions)
}
