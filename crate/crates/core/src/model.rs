//! Shared domain types.
//!
//! Every text offset in this crate counts Unicode code points (Rust `char`s),
//! never bytes or grapheme clusters.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// The nine categories of protected health information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhiCategory {
    PatientName,
    PersonName,
    Location,
    Institution,
    Date,
    Age,
    IdNumber,
    PhoneNumber,
    UrlEmail,
}

impl PhiCategory {
    /// All categories, in the row order of the PHI metrics table.
    pub const ALL: [PhiCategory; 9] = [
        PhiCategory::PatientName,
        PhiCategory::PersonName,
        PhiCategory::Location,
        PhiCategory::Institution,
        PhiCategory::Date,
        PhiCategory::Age,
        PhiCategory::IdNumber,
        PhiCategory::PhoneNumber,
        PhiCategory::UrlEmail,
    ];

    /// Row label used in rendered reports.
    pub fn label(self) -> &'static str {
        match self {
            PhiCategory::PatientName => "Patient names",
            PhiCategory::PersonName => "Person names",
            PhiCategory::Location => "Locations",
            PhiCategory::Institution => "Institutions",
            PhiCategory::Date => "Dates",
            PhiCategory::Age => "Ages",
            PhiCategory::IdNumber => "ID numbers",
            PhiCategory::PhoneNumber => "Phone numbers",
            PhiCategory::UrlEmail => "URL/e-mails",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PhiCategory::PatientName => "PatientName",
            PhiCategory::PersonName => "PersonName",
            PhiCategory::Location => "Location",
            PhiCategory::Institution => "Institution",
            PhiCategory::Date => "Date",
            PhiCategory::Age => "Age",
            PhiCategory::IdNumber => "IdNumber",
            PhiCategory::PhoneNumber => "PhoneNumber",
            PhiCategory::UrlEmail => "UrlEmail",
        }
    }

    /// Categories whose surrogates are drawn from name-like lexicons.
    pub fn is_name_like(self) -> bool {
        matches!(
            self,
            PhiCategory::PatientName
                | PhiCategory::PersonName
                | PhiCategory::Location
                | PhiCategory::Institution
        )
    }
}

impl fmt::Display for PhiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhiCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PhiCategory::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown PHI category `{s}`")))
    }
}

/// A categorized annotation over `[start, end)` of a document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhiSpan {
    pub start: usize,
    pub end: usize,
    pub category: PhiCategory,
    pub surface: String,
}

impl PhiSpan {
    /// Builds a span whose surface is taken from `text`.
    pub fn from_text(text: &str, start: usize, end: usize, category: PhiCategory) -> Result<Self> {
        if start >= end {
            return Err(Error::OffsetOutOfRange {
                start,
                end,
                len: codepoint_len(text),
            });
        }
        let surface = slice_codepoints(text, start, end)?.to_owned();
        Ok(PhiSpan {
            start,
            end,
            category,
            surface,
        })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &PhiSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Checks the surface invariant against `text`.
    pub fn validate(&self, text: &str) -> Result<()> {
        let slice = slice_codepoints(text, self.start, self.end)?;
        if self.start >= self.end || slice != self.surface {
            return Err(Error::invalid(format!(
                "span {}..{} ({}) does not match its surface {:?}",
                self.start, self.end, self.category, self.surface
            )));
        }
        Ok(())
    }
}

/// A proleptic Gregorian civil date, restricted to years 1800..=2200.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CalendarDate(NaiveDate);

impl CalendarDate {
    pub const MIN_YEAR: i32 = 1800;
    pub const MAX_YEAR: i32 = 2200;

    pub fn new(year: i32, month: u32, day: u32) -> Result<Self> {
        let d = NaiveDate::from_ymd_opt(year, month, day)
            .ok_or_else(|| Error::InvalidDate(format!("{year:04}-{month:02}-{day:02}")))?;
        Self::checked(d)
    }

    fn checked(d: NaiveDate) -> Result<Self> {
        if (Self::MIN_YEAR..=Self::MAX_YEAR).contains(&d.year()) {
            Ok(CalendarDate(d))
        } else {
            Err(Error::DateOutOfRange(d.to_string()))
        }
    }

    pub fn year(self) -> i32 {
        self.0.year()
    }

    pub fn month(self) -> u32 {
        self.0.month()
    }

    pub fn day(self) -> u32 {
        self.0.day()
    }

    /// Signed number of days from `other` to `self`.
    pub fn days_since(self, other: CalendarDate) -> i64 {
        (self.0 - other.0).num_days()
    }
}

/// Returns the date exactly `offset_days` after `d`.
pub fn shift_date(d: CalendarDate, offset_days: i64) -> Result<CalendarDate> {
    let shifted = d
        .0
        .checked_add_signed(chrono::Duration::days(offset_days))
        .ok_or_else(|| Error::DateOutOfRange(format!("{d} + {offset_days} days")))?;
    CalendarDate::checked(shifted)
}

impl fmt::Display for CalendarDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}-{:02}", self.year(), self.month(), self.day())
    }
}

impl FromStr for CalendarDate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidDate(s.to_owned());
        let mut parts = s.split('-');
        let (Some(y), Some(m), Some(d), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        if y.len() != 4 || m.len() != 2 || d.len() != 2 {
            return Err(bad());
        }
        let y = y.parse().map_err(|_| bad())?;
        let m = m.parse().map_err(|_| bad())?;
        let d = d.parse().map_err(|_| bad())?;
        CalendarDate::new(y, m, d)
    }
}

impl Serialize for CalendarDate {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CalendarDate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A clinical report as extracted from the health record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub patient_id: String,
    pub date: CalendarDate,
    pub text: String,
    #[serde(default)]
    pub known_patient_names: Vec<(String, String)>,
}

/// One applied rewrite: the original span and what replaced it.
///
/// `output_start` locates the replacement in the rewritten text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedReplacement {
    pub span: PhiSpan,
    pub replacement: String,
    pub output_start: usize,
}

/// A report rewritten with surrogates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeidDocument {
    pub doc_id: String,
    pub pseudo_patient_id: String,
    pub date: CalendarDate,
    pub text: String,
    pub applied: Vec<AppliedReplacement>,
}

/// Metadata of one imaging study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub patient_id: String,
    pub date: CalendarDate,
    /// Seconds since midnight.
    #[serde(default)]
    pub timestamp: Option<u32>,
    pub image_ids: Vec<String>,
    #[serde(default)]
    pub metadata: IndexMap<String, String>,
}

impl StudyRecord {
    pub fn validate(&self) -> Result<()> {
        if self.image_ids.is_empty() {
            return Err(Error::invalid(format!("study {} has no images", self.study_id)));
        }
        if self.patient_id.is_empty() {
            return Err(Error::invalid(format!("study {} has no patient id", self.study_id)));
        }
        Ok(())
    }
}

pub fn codepoint_len(text: &str) -> usize {
    text.chars().count()
}

/// Substring of `text` between code-point offsets `start..end`.
pub fn slice_codepoints(text: &str, start: usize, end: usize) -> Result<&str> {
    let err = || Error::OffsetOutOfRange {
        start,
        end,
        len: codepoint_len(text),
    };
    if start > end {
        return Err(err());
    }
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b_start = indices.nth(start).ok_or_else(err)?;
    let b_end = if end == start {
        b_start
    } else {
        indices.nth(end - start - 1).ok_or_else(err)?
    };
    Ok(&text[b_start..b_end])
}

/// Maps byte offsets of a string to code-point offsets and back.
#[derive(Debug, Clone)]
pub struct OffsetMap {
    /// Byte offset of each code point, plus the total byte length.
    byte_of_cp: Vec<usize>,
}

impl OffsetMap {
    pub fn new(text: &str) -> Self {
        let mut byte_of_cp: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        byte_of_cp.push(text.len());
        OffsetMap { byte_of_cp }
    }

    pub fn len_cp(&self) -> usize {
        self.byte_of_cp.len() - 1
    }

    /// Code-point offset of a byte offset lying on a char boundary.
    pub fn cp(&self, byte: usize) -> usize {
        self.byte_of_cp
            .binary_search(&byte)
            .expect("byte offset on a char boundary")
    }

    pub fn byte(&self, cp: usize) -> usize {
        self.byte_of_cp[cp]
    }
}
