use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use osteokit_core::embed_eval::EmbeddingMatrix;
use osteokit_core::{Error, Result};
use serde::Deserialize;

/// Destination for every file a command produces. In dry-run mode nothing
/// is written; the paths are collected and reported instead.
#[derive(Debug)]
pub struct Sink {
    dry_run: bool,
    planned: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dry_run: bool) -> Self {
        Sink {
            dry_run,
            planned: Vec::new(),
        }
    }

    pub fn is_dry_run(&self) -> bool {
        self.dry_run
    }

    /// Runs `write` unless this is a dry run. Parent directories are created
    /// first.
    pub fn produce(&mut self, path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        self.planned.push(path.to_path_buf());
        if self.dry_run {
            return Ok(());
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?;
        }
        write(path)
    }

    pub fn bytes(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
        self.produce(path, |p| {
            fs::write(p, contents).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })
        })
    }

    pub fn json<T: serde::Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        self.bytes(path, serde_json::to_string_pretty(value)? + "\n")
    }

    pub fn jsonl<T: serde::Serialize>(&mut self, path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
        self.bytes(path, osteokit_core::jsonl::to_string(items)?)
    }

    pub fn lines<S: AsRef<str>>(&mut self, path: &Path, items: impl IntoIterator<Item = S>) -> Result<()> {
        let mut out = String::new();
        for s in items {
            out.push_str(s.as_ref());
            out.push('\n');
        }
        self.bytes(path, out)
    }

    pub fn embeddings(&mut self, npy: &Path, m: &EmbeddingMatrix, source: &str) -> Result<()> {
        let manifest = manifest_path(npy);
        self.planned.push(manifest.clone());
        self.produce(npy, |p| m.save(p, &manifest, Some(source), None))
    }

    /// Prints the collected paths when nothing was written.
    pub fn report(&self) {
        if self.dry_run {
            for p in &self.planned {
                println!("would write {}", p.display());
            }
        }
    }
}

/// `images.npy` -> `images.json`.
pub fn manifest_path(npy: &Path) -> PathBuf {
    npy.with_extension("json")
}

pub fn load_embeddings(npy: &Path, manifest: Option<&Path>) -> Result<EmbeddingMatrix> {
    let default = manifest_path(npy);
    EmbeddingMatrix::load(npy, manifest.unwrap_or(&default))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Schema {
                path: path.to_path_buf(),
                // header is line 1
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct LabelRow {
    id: String,
    label: f64,
}

#[derive(Deserialize)]
struct GroupRow {
    id: String,
    group: String,
}

/// `id,label` rows, keyed by id.
pub fn read_labels(path: &Path) -> Result<HashMap<String, f64>> {
    let mut out = HashMap::new();
    for row in read_csv::<LabelRow>(path)? {
        if !row.label.is_finite() {
            return Err(Error::InvalidInput(format!("{}: non-finite label for `{}`", path.display(), row.id)));
        }
        if out.insert(row.id.clone(), row.label).is_some() {
            return Err(Error::InvalidInput(format!("{}: duplicate id `{}`", path.display(), row.id)));
        }
    }
    Ok(out)
}

/// `id,group` rows as group -> member ids.
pub fn read_groups(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for row in read_csv::<GroupRow>(path)? {
        out.entry(row.group).or_default().push(row.id);
    }
    Ok(out)
}

/// Labels in the row order of `ids`.
pub fn align_labels(ids: &[String], labels: &HashMap<String, f64>) -> Result<Vec<f64>> {
    ids.iter()
        .map(|id| labels.get(id).copied().ok_or_else(|| Error::MissingId(id.clone())))
        .collect()
}

/// Binary labels; anything other than 0 or 1 is rejected.
pub fn binary(values: &[f64]) -> Result<Vec<bool>> {
    values
        .iter()
        .map(|&v| match v {
            v if v == 0.0 => Ok(false),
            v if v == 1.0 => Ok(true),
            v => Err(Error::InvalidInput(format!("expected a 0/1 label, got {v}"))),
        })
        .collect()
}

pub fn write_labels_csv(ids: &[String], labels: &[f64]) -> String {
    let mut out = String::from("id,label\n");
    for (id, l) in ids.iter().zip(labels) {
        out.push_str(&format!("{id},{l}\n"));
    }
    out
}

pub fn write_groups_csv(ids: &[String], groups: &[String]) -> String {
    let mut out = String::from("id,group\n");
    for (id, g) in ids.iter().zip(groups) {
        out.push_str(&format!("{id},{g}\n"));
    }
    out
}
