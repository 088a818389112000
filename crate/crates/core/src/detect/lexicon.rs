use std::collections::HashMap;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// NFC, lowercase, typographic apostrophes folded to `'`, whitespace runs
/// collapsed to a single space and trimmed.
pub fn normalize(s: &str) -> String {
    let folded: String = s
        .nfc()
        .flat_map(char::to_lowercase)
        .map(|c| if c == '\u{2019}' { '\'' } else { c })
        .collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconEntry {
    /// Normalized form used for matching.
    pub key: String,
    /// First spelling seen in the source, used when rendering surrogates.
    pub display: String,
    pub weight: f64,
}

/// A named list of normalized strings with optional frequency weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    pub name: String,
    entries: Vec<LexiconEntry>,
    index: HashMap<String, usize>,
    max_words: usize,
    weighted: bool,
}

impl Lexicon {
    pub fn new(name: impl Into<String>) -> Self {
        Lexicon {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn from_entries<I, S>(name: impl Into<String>, entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut lex = Lexicon::new(name);
        for e in entries {
            lex.insert(e.as_ref(), None);
        }
        lex
    }

    /// Adds an entry; duplicates (after normalization) accumulate weight.
    pub fn insert(&mut self, raw: &str, weight: Option<f64>) {
        let key = normalize(raw);
        if key.is_empty() {
            return;
        }
        if weight.is_some() {
            self.weighted = true;
        }
        let w = weight.unwrap_or(1.0);
        if let Some(&i) = self.index.get(&key) {
            self.entries[i].weight += w;
            return;
        }
        self.max_words = self.max_words.max(word_count(&key));
        self.index.insert(key.clone(), self.entries.len());
        self.entries.push(LexiconEntry {
            key,
            display: raw.split_whitespace().collect::<Vec<_>>().join(" "),
            weight: w,
        });
    }

    /// Parses the newline-delimited lexicon format: one entry per line,
    /// optionally followed by a TAB and a positive integer weight.
    pub fn parse(name: impl Into<String>, source: &str, origin: &Path) -> Result<Self> {
        let mut lex = Lexicon::new(name);
        for (i, line) in source.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (entry, weight) = match line.split_once('\t') {
                Some((e, w)) => {
                    let w: u64 = w.trim().parse().map_err(|_| Error::Schema {
                        path: origin.to_path_buf(),
                        line: i + 1,
                        message: format!("weight `{w}` is not a positive integer"),
                    })?;
                    if w == 0 {
                        return Err(Error::Schema {
                            path: origin.to_path_buf(),
                            line: i + 1,
                            message: "weight must be positive".into(),
                        });
                    }
                    (e, Some(w as f64))
                }
                None => (line, None),
            };
            lex.insert(entry, weight);
        }
        Ok(lex)
    }

    pub fn load(name: impl Into<String>, path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Lexicon::parse(name, &source, path)
    }

    pub fn contains(&self, normalized: &str) -> bool {
        self.index.contains_key(normalized)
    }

    pub fn get(&self, normalized: &str) -> Option<&LexiconEntry> {
        self.index.get(normalized).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest number of words in any entry.
    pub fn max_words(&self) -> usize {
        self.max_words
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    pub fn extend_from(&mut self, other: &Lexicon) {
        for e in &other.entries {
            self.insert(&e.display, other.weighted.then_some(e.weight));
        }
    }
}

/// Word count under the detector's tokenization (alphanumeric runs joined by
/// hyphens).
pub(crate) fn word_count(s: &str) -> usize {
    super::tokens::tokenize(s).len()
}
