//! Line-delimited JSON files: one UTF-8 object per LF-terminated line.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Parses every non-blank line; a malformed line is reported with its
/// 1-based line number.
pub fn parse<T: DeserializeOwned>(src: &str, origin: &Path) -> Result<Vec<T>> {
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Schema {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&src, path)
}

pub fn to_string<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    fs::write(path, to_string(items)?).map_err(|e| Error::io(path, e))
}
