//! Image metadata scrubbing, OCR-based image filtering and study/report
//! pairing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CalendarDate, RawDocument, StudyRecord};
use crate::surrogate::{IdKind, PseudoIdMap};

pub const DEFAULT_OCR_THRESHOLD: usize = 35;

/// Keeps only allowlisted metadata keys, in their original order, and
/// replaces the patient and study ids with their pseudonyms.
pub fn scrub_metadata(study: &StudyRecord, allowlist: &BTreeSet<String>, ids: &PseudoIdMap) -> Result<StudyRecord> {
    let mut out = study.clone();
    out.patient_id = ids.resolve(IdKind::Patient, &study.patient_id)?;
    out.study_id = ids.resolve(IdKind::Study, &study.study_id)?;
    out.metadata.retain(|k, _| allowlist.contains(k));
    Ok(out)
}

/// Reads a newline-delimited key list; blank lines are skipped.
pub fn parse_allowlist(src: &str) -> BTreeSet<String> {
    src.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Text found on an image by an external OCR engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrRecord {
    pub image_id: String,
    pub extracted_text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrSplit {
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
}

/// Non-whitespace code points, the quantity compared to the threshold.
pub fn ocr_char_count(text: &str) -> usize {
    text.chars().filter(|c| !c.is_whitespace()).count()
}

/// Keeps images whose OCR text has fewer than `threshold` non-whitespace
/// characters. Images with more text likely carry burned-in identifiers.
pub fn filter_by_ocr(records: &[OcrRecord], threshold: usize) -> Result<OcrSplit> {
    let mut split = OcrSplit::default();
    let mut seen = BTreeSet::new();
    for r in records {
        if r.image_id.is_empty() {
            return Err(Error::invalid("OCR record with empty image_id"));
        }
        if !seen.insert(r.image_id.as_str()) {
            return Err(Error::invalid(format!("duplicate image_id `{}`", r.image_id)));
        }
        if ocr_char_count(&r.extracted_text) < threshold {
            split.kept.push(r.image_id.clone());
        } else {
            split.dropped.push(r.image_id.clone());
        }
    }
    Ok(split)
}

/// The fields of a report needed for pairing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub doc_id: String,
    pub patient_id: String,
    pub date: CalendarDate,
    /// Seconds since midnight.
    #[serde(default)]
    pub timestamp: Option<u32>,
}

impl From<&RawDocument> for ReportRecord {
    fn from(d: &RawDocument) -> Self {
        ReportRecord {
            doc_id: d.doc_id.clone(),
            patient_id: d.patient_id.clone(),
            date: d.date,
            timestamp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedStudy {
    pub study: StudyRecord,
    pub report_doc_id: String,
}

/// One line of the pairs file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub study_id: String,
    pub report_doc_id: String,
}

impl From<&PairedStudy> for PairRecord {
    fn from(p: &PairedStudy) -> Self {
        PairRecord {
            study_id: p.study.study_id.clone(),
            report_doc_id: p.report_doc_id.clone(),
        }
    }
}

/// A (patient, date) group whose study and report counts differ.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardedGroup {
    pub patient_id: String,
    pub date: CalendarDate,
    pub study_ids: Vec<String>,
    pub report_doc_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub pairs: Vec<PairedStudy>,
    pub discarded: Vec<DiscardedGroup>,
}

impl Pairing {
    pub fn discarded_items(&self) -> usize {
        self.discarded
            .iter()
            .map(|g| g.study_ids.len() + g.report_doc_ids.len())
            .sum()
    }
}

/// Orders items by timestamp when every item carries one; otherwise keeps
/// input order.
fn chronological<T>(items: &mut [&T], timestamp: impl Fn(&T) -> Option<u32>) {
    if items.iter().all(|t| timestamp(t).is_some()) {
        items.sort_by_key(|t| timestamp(t));
    }
}

/// Pairs studies and reports of the same patient and date in chronological
/// order. A (patient, date) group with unequal numbers of studies and
/// reports is ambiguous and discarded whole. Output is ordered by patient
/// id, then date.
pub fn pair_by_date(studies: &[StudyRecord], reports: &[ReportRecord]) -> Pairing {
    type Key<'a> = (&'a str, CalendarDate);
    let mut groups: BTreeMap<Key, (Vec<&StudyRecord>, Vec<&ReportRecord>)> = BTreeMap::new();
    for s in studies {
        groups.entry((s.patient_id.as_str(), s.date)).or_default().0.push(s);
    }
    for r in reports {
        groups.entry((r.patient_id.as_str(), r.date)).or_default().1.push(r);
    }
    let mut out = Pairing::default();
    for ((patient, date), (mut s, mut r)) in groups {
        if s.len() == r.len() {
            chronological(&mut s, |x: &StudyRecord| x.timestamp);
            chronological(&mut r, |x: &ReportRecord| x.timestamp);
            out.pairs.extend(s.into_iter().zip(r).map(|(s, r)| PairedStudy {
                study: s.clone(),
                report_doc_id: r.doc_id.clone(),
            }));
        } else {
            out.discarded.push(DiscardedGroup {
                patient_id: patient.to_owned(),
                date,
                study_ids: s.iter().map(|x| x.study_id.clone()).collect(),
                report_doc_ids: r.iter().map(|x| x.doc_id.clone()).collect(),
            });
        }
    }
    out
}
