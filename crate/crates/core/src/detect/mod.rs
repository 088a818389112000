//! Rule-based detection of PHI in French clinical text.
//!
//! Detection runs nine rules over a document and resolves overlapping
//! candidates longest-first, breaking length ties with a configurable
//! category precedence.

mod lexicon;
pub mod months;
mod rules;
mod tokens;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub use lexicon::{normalize, Lexicon, LexiconEntry};
pub use rules::expand_year;
pub use tokens::{tokenize, Token};

use crate::error::{Error, Result};
use crate::model::{PhiCategory, PhiSpan, RawDocument};

pub const DEFAULT_TITLE_TRIGGERS: [&str; 9] = [
    "Dr", "Docteur", "Pr", "Professeur", "Monsieur", "Madame", "M.", "Mme", "Mlle",
];

pub const DEFAULT_PRECEDENCE: [PhiCategory; 9] = [
    PhiCategory::PatientName,
    PhiCategory::PersonName,
    PhiCategory::IdNumber,
    PhiCategory::Date,
    PhiCategory::PhoneNumber,
    PhiCategory::UrlEmail,
    PhiCategory::Age,
    PhiCategory::Institution,
    PhiCategory::Location,
];

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub first_names: Lexicon,
    pub last_names: Lexicon,
    pub cities: Lexicon,
    pub institutions: Lexicon,
    pub months: Lexicon,
    pub min_id_digits: usize,
    pub title_triggers: Vec<String>,
    /// Highest precedence first.
    pub category_precedence: Vec<PhiCategory>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            first_names: Lexicon::new("first_names"),
            last_names: Lexicon::new("last_names"),
            cities: Lexicon::new("cities"),
            institutions: Lexicon::new("institutions"),
            months: months::default_month_lexicon(),
            min_id_digits: 7,
            title_triggers: DEFAULT_TITLE_TRIGGERS.iter().map(|s| s.to_string()).collect(),
            category_precedence: DEFAULT_PRECEDENCE.to_vec(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let distinct: BTreeSet<_> = self.category_precedence.iter().collect();
        if self.category_precedence.len() != 9 || distinct.len() != 9 {
            return Err(Error::invalid(
                "category_precedence must list each of the 9 categories exactly once",
            ));
        }
        if self.min_id_digits == 0 {
            return Err(Error::invalid("min_id_digits must be positive"));
        }
        for e in self.months.entries() {
            if months::month_number(&e.key).is_none() {
                return Err(Error::invalid(format!("month lexicon entry `{}` is not a French month", e.key)));
            }
        }
        Ok(())
    }

    /// Rank of a category in the precedence order; lower wins.
    pub fn rank(&self, c: PhiCategory) -> usize {
        self.category_precedence
            .iter()
            .position(|&p| p == c)
            .unwrap_or(usize::MAX)
    }

    /// Reads the lexicon directory layout produced by the fixture generator:
    /// `first_names_female.txt`, `first_names_male.txt`, `last_names.txt`,
    /// `cities.txt`, `institutions.txt` and optionally `months.txt`.
    pub fn from_lexicon_dir(dir: &Path) -> Result<Self> {
        let lexicons = LexiconSet::load(dir)?;
        Ok(lexicons.detector_config())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: DetectorConfigFile = serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        file.resolve(path.parent().unwrap_or(Path::new(".")))
    }
}

/// All lexicons used by detection and surrogate generation.
#[derive(Debug, Clone)]
pub struct LexiconSet {
    pub female_first_names: Lexicon,
    pub male_first_names: Lexicon,
    pub last_names: Lexicon,
    pub cities: Lexicon,
    pub institutions: Lexicon,
    pub months: Lexicon,
}

impl LexiconSet {
    pub fn load(dir: &Path) -> Result<Self> {
        let months_path = dir.join("months.txt");
        Ok(LexiconSet {
            female_first_names: Lexicon::load("first_names_female", &dir.join("first_names_female.txt"))?,
            male_first_names: Lexicon::load("first_names_male", &dir.join("first_names_male.txt"))?,
            last_names: Lexicon::load("last_names", &dir.join("last_names.txt"))?,
            cities: Lexicon::load("cities", &dir.join("cities.txt"))?,
            institutions: Lexicon::load("institutions", &dir.join("institutions.txt"))?,
            months: if months_path.exists() {
                Lexicon::load("months", &months_path)?
            } else {
                months::default_month_lexicon()
            },
        })
    }

    pub fn first_names(&self) -> Lexicon {
        let mut all = Lexicon::new("first_names");
        all.extend_from(&self.female_first_names);
        all.extend_from(&self.male_first_names);
        all
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            first_names: self.first_names(),
            last_names: self.last_names.clone(),
            cities: self.cities.clone(),
            institutions: self.institutions.clone(),
            months: self.months.clone(),
            ..DetectorConfig::default()
        }
    }
}

/// On-disk detector configuration. Lexicon paths are relative to the
/// config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfigFile {
    #[serde(default)]
    pub lexicon_dir: Option<PathBuf>,
    #[serde(default)]
    pub first_names: Vec<PathBuf>,
    #[serde(default)]
    pub last_names: Option<PathBuf>,
    #[serde(default)]
    pub cities: Option<PathBuf>,
    #[serde(default)]
    pub institutions: Option<PathBuf>,
    #[serde(default)]
    pub months: Option<PathBuf>,
    #[serde(default = "default_min_id_digits")]
    pub min_id_digits: usize,
    #[serde(default)]
    pub title_triggers: Option<Vec<String>>,
    #[serde(default)]
    pub category_precedence: Option<Vec<PhiCategory>>,
}

fn default_min_id_digits() -> usize {
    7
}

impl DetectorConfigFile {
    pub fn resolve(&self, base: &Path) -> Result<DetectorConfig> {
        let mut cfg = match &self.lexicon_dir {
            Some(dir) => DetectorConfig::from_lexicon_dir(&base.join(dir))?,
            None => DetectorConfig::default(),
        };
        for p in &self.first_names {
            cfg.first_names.extend_from(&Lexicon::load("first_names", &base.join(p))?);
        }
        if let Some(p) = &self.last_names {
            cfg.last_names = Lexicon::load("last_names", &base.join(p))?;
        }
        if let Some(p) = &self.cities {
            cfg.cities = Lexicon::load("cities", &base.join(p))?;
        }
        if let Some(p) = &self.institutions {
            cfg.institutions = Lexicon::load("institutions", &base.join(p))?;
        }
        if let Some(p) = &self.months {
            cfg.months = Lexicon::load("months", &base.join(p))?;
        }
        cfg.min_id_digits = self.min_id_digits;
        if let Some(t) = &self.title_triggers {
            cfg.title_triggers = t.clone();
        }
        if let Some(p) = &self.category_precedence {
            cfg.category_precedence = p.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A document with its detected spans, non-overlapping and sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub doc: RawDocument,
    pub spans: Vec<PhiSpan>,
}

impl AnnotatedDocument {
    /// Checks ordering, non-overlap and the surface invariant.
    pub fn validate(&self) -> Result<()> {
        for w in self.spans.windows(2) {
            if w[1].start < w[0].end {
                return Err(Error::invalid(format!(
                    "spans {}..{} and {}..{} overlap or are unsorted in {}",
                    w[0].start, w[0].end, w[1].start, w[1].end, self.doc.doc_id
                )));
            }
        }
        self.spans.iter().try_for_each(|s| s.validate(&self.doc.text))
    }
}

/// Runs every rule over `doc` and resolves overlaps. The text is
/// NFC-normalized first; the returned document carries the normalized text.
pub fn detect(doc: &RawDocument, cfg: &DetectorConfig) -> AnnotatedDocument {
    let mut doc = doc.clone();
    if !unicode_normalization::is_nfc(&doc.text) {
        doc.text = doc.text.nfc().collect();
    }
    let scanner = rules::Scanner::new(&doc.text);
    let mut candidates = scanner.patient_names(&doc.known_patient_names);
    candidates.extend(scanner.person_names(cfg));
    candidates.extend(scanner.locations(cfg));
    candidates.extend(scanner.institutions(cfg));
    candidates.extend(scanner.dates(cfg));
    candidates.extend(scanner.ages());
    candidates.extend(scanner.id_numbers(cfg));
    candidates.extend(scanner.phone_numbers());
    candidates.extend(scanner.urls_emails());

    let spans: Vec<PhiSpan> = candidates
        .into_iter()
        .filter(|(s, e, _)| s < e)
        .map(|(s, e, c)| PhiSpan::from_text(&doc.text, s, e, c).expect("rule offsets lie within the text"))
        .collect();
    let spans = resolve_overlaps(spans, &cfg.category_precedence);
    AnnotatedDocument { doc, spans }
}

/// Detects every document of a corpus in parallel; output keeps corpus order.
pub fn detect_corpus(docs: &[RawDocument], cfg: &DetectorConfig) -> Vec<AnnotatedDocument> {
    docs.par_iter().map(|d| detect(d, cfg)).collect()
}

/// Keeps the longest spans first; among equal lengths the category listed
/// earlier in `precedence` wins, then the earlier start. The result is
/// non-overlapping and sorted by start.
pub fn resolve_overlaps(mut spans: Vec<PhiSpan>, precedence: &[PhiCategory]) -> Vec<PhiSpan> {
    let rank = |c: PhiCategory| precedence.iter().position(|&p| p == c).unwrap_or(usize::MAX);
    spans.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then(rank(a.category).cmp(&rank(b.category)))
            .then(a.start.cmp(&b.start))
    });
    let mut kept: Vec<PhiSpan> = Vec::with_capacity(spans.len());
    for s in spans {
        if !kept.iter().any(|k| k.overlaps(&s)) {
            kept.push(s);
        }
    }
    kept.sort_by_key(|s| s.start);
    kept
}
