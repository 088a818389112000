//! Scoring detected spans against gold standoff annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detect::AnnotatedDocument;
use crate::error::{Error, Result};
use crate::model::{PhiCategory, PhiSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchPolicy {
    /// Same start, end and category.
    #[default]
    Exact,
    /// Same category and at least one shared code point.
    Overlap,
}

impl FromStr for MatchPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(MatchPolicy::Exact),
            "overlap" => Ok(MatchPolicy::Overlap),
            _ => Err(Error::invalid(format!("unknown matching policy `{s}` (expected exact|overlap)"))),
        }
    }
}

/// A span without its surface text, as stored in gold files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StandoffSpan {
    pub start: usize,
    pub end: usize,
    pub category: PhiCategory,
}

impl StandoffSpan {
    fn overlap(&self, other: &StandoffSpan) -> usize {
        self.end.min(other.end).saturating_sub(self.start.max(other.start))
    }
}

impl From<&PhiSpan> for StandoffSpan {
    fn from(s: &PhiSpan) -> Self {
        StandoffSpan {
            start: s.start,
            end: s.end,
            category: s.category,
        }
    }
}

/// One line of a gold (or prediction) standoff file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StandoffDocument {
    pub doc_id: String,
    pub spans: Vec<StandoffSpan>,
}

impl StandoffDocument {
    pub fn validate(&self) -> Result<()> {
        let mut sorted = self.spans.clone();
        sorted.sort();
        for s in &sorted {
            if s.start >= s.end {
                return Err(Error::invalid(format!("empty span {}..{} in {}", s.start, s.end, self.doc_id)));
            }
        }
        for w in sorted.windows(2) {
            if w[1].start < w[0].end {
                return Err(Error::invalid(format!(
                    "overlapping spans {}..{} and {}..{} in {}",
                    w[0].start, w[0].end, w[1].start, w[1].end, self.doc_id
                )));
            }
        }
        Ok(())
    }
}

impl From<&AnnotatedDocument> for StandoffDocument {
    fn from(a: &AnnotatedDocument) -> Self {
        StandoffDocument {
            doc_id: a.doc.doc_id.clone(),
            spans: a.spans.iter().map(StandoffSpan::from).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

/// `num / den`, or 1.0 when nothing was there to get wrong.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-category true positives, false positives and false negatives for one
/// document. Every category is present in the result.
pub fn match_spans(pred: &[StandoffSpan], gold: &[StandoffSpan], policy: MatchPolicy) -> BTreeMap<PhiCategory, Counts> {
    let mut out: BTreeMap<PhiCategory, Counts> = PhiCategory::ALL.iter().map(|&c| (c, Counts::default())).collect();
    for cat in PhiCategory::ALL {
        let mut p: Vec<&StandoffSpan> = pred.iter().filter(|s| s.category == cat).collect();
        let mut g: Vec<&StandoffSpan> = gold.iter().filter(|s| s.category == cat).collect();
        p.sort();
        g.sort();
        let tp = match policy {
            MatchPolicy::Exact => {
                let gs: BTreeSet<_> = g.iter().map(|s| (s.start, s.end)).collect();
                let ps: BTreeSet<_> = p.iter().map(|s| (s.start, s.end)).collect();
                gs.intersection(&ps).count()
            }
            MatchPolicy::Overlap => greedy_overlap(&p, &g),
        };
        let c = out.get_mut(&cat).expect("all categories present");
        c.tp = tp;
        c.fp = p.len() - tp;
        c.fn_ = g.len() - tp;
    }
    out
}

/// One-to-one matching, largest overlap first, ties broken by document
/// order of the gold span and then of the predicted span.
fn greedy_overlap(pred: &[&StandoffSpan], gold: &[&StandoffSpan]) -> usize {
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (gi, g) in gold.iter().enumerate() {
        for (pi, p) in pred.iter().enumerate() {
            let ov = g.overlap(p);
            if ov > 0 {
                pairs.push((ov, gi, pi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_g = vec![false; gold.len()];
    let mut used_p = vec![false; pred.len()];
    let mut tp = 0;
    for (_, gi, pi) in pairs {
        if !used_g[gi] && !used_p[pi] {
            used_g[gi] = true;
            used_p[pi] = true;
            tp += 1;
        }
    }
    tp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScores {
    pub category: PhiCategory,
    /// Number of gold spans.
    pub count: usize,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No gold and no predicted span: the 1.0 scores are vacuous.
    pub support_zero: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub matching_policy: MatchPolicy,
    pub documents: usize,
    /// In table row order.
    pub categories: Vec<CategoryScores>,
    /// From pooled counts over all categories.
    pub micro: Aggregate,
    /// Unweighted mean over categories with at least one gold or predicted
    /// span.
    #[serde(rename = "macro")]
    pub macro_: Aggregate,
}

/// Scores a corpus of predictions against gold. Both sides must cover the
/// same documents.
pub fn evaluate(pred: &[StandoffDocument], gold: &[StandoffDocument], policy: MatchPolicy) -> Result<EvalReport> {
    let index = |docs: &[StandoffDocument], side: &str| -> Result<BTreeMap<String, usize>> {
        let mut m = BTreeMap::new();
        for (i, d) in docs.iter().enumerate() {
            d.validate()?;
            if m.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate doc_id `{}` in {side}", d.doc_id)));
            }
        }
        Ok(m)
    };
    let pred_ix = index(pred, "predictions")?;
    let gold_ix = index(gold, "gold")?;
    if let Some(id) = gold_ix.keys().find(|k| !pred_ix.contains_key(*k)) {
        return Err(Error::MissingId(format!("{id} (no prediction for gold document)")));
    }
    if let Some(id) = pred_ix.keys().find(|k| !gold_ix.contains_key(*k)) {
        return Err(Error::MissingId(format!("{id} (no gold annotation for document)")));
    }

    let mut totals: BTreeMap<PhiCategory, Counts> = BTreeMap::new();
    for (id, &gi) in &gold_ix {
        let per_doc = match_spans(&pred[pred_ix[id]].spans, &gold[gi].spans, policy);
        for (c, n) in per_doc {
            totals.entry(c).or_default().add(n);
        }
    }
    Ok(report_from_counts(&totals, policy, gold.len()))
}

fn report_from_counts(totals: &BTreeMap<PhiCategory, Counts>, policy: MatchPolicy, documents: usize) -> EvalReport {
    let mut pooled = Counts::default();
    let mut categories = Vec::with_capacity(9);
    for cat in PhiCategory::ALL {
        let c = totals.get(&cat).copied().unwrap_or_default();
        pooled.add(c);
        categories.push(CategoryScores {
            category: cat,
            count: c.tp + c.fn_,
            counts: c,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            support_zero: c.tp + c.fp + c.fn_ == 0,
        });
    }
    let active: Vec<&CategoryScores> = categories.iter().filter(|c| !c.support_zero).collect();
    let macro_ = if active.is_empty() {
        Aggregate {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        }
    } else {
        let n = active.len() as f64;
        Aggregate {
            precision: active.iter().map(|c| c.precision).sum::<f64>() / n,
            recall: active.iter().map(|c| c.recall).sum::<f64>() / n,
            f1: active.iter().map(|c| c.f1).sum::<f64>() / n,
        }
    };
    EvalReport {
        matching_policy: policy,
        documents,
        categories,
        micro: Aggregate {
            precision: pooled.precision(),
            recall: pooled.recall(),
            f1: pooled.f1(),
        },
        macro_,
    }
}

impl EvalReport {
    pub fn scores(&self, category: PhiCategory) -> &CategoryScores {
        self.categories
            .iter()
            .find(|c| c.category == category)
            .expect("every category is reported")
    }

    /// Aligned text table, one row per category in table order.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let policy = match self.matching_policy {
            MatchPolicy::Exact => "exact",
            MatchPolicy::Overlap => "overlap",
        };
        let _ = writeln!(s, "PHI identification metrics ({policy} match, {} documents)", self.documents);
        let _ = writeln!(s, "{:<16} {:>6} {:>9} {:>9} {:>9}", "Category", "Count", "Precision", "Recall", "F1");
        for c in &self.categories {
            let mark = if c.support_zero { "  (support=0)" } else { "" };
            let _ = writeln!(
                s,
                "{:<16} {:>6} {:>9.3} {:>9.3} {:>9.3}{mark}",
                c.category.label(),
                c.count,
                c.precision,
                c.recall,
                c.f1
            );
        }
        for (name, a) in [("Micro average", self.micro), ("Macro average", self.macro_)] {
            let _ = writeln!(s, "{:<16} {:>6} {:>9.3} {:>9.3} {:>9.3}", name, "", a.precision, a.recall, a.f1);
        }
        s
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
        w.write_record(["category", "count", "tp", "fp", "fn", "precision", "recall", "f1", "support_zero"])
            .map_err(csv_err)?;
        for c in &self.categories {
            w.write_record([
                c.category.name().to_owned(),
                c.count.to_string(),
                c.counts.tp.to_string(),
                c.counts.fp.to_string(),
                c.counts.fn_.to_string(),
                format!("{:.6}", c.precision),
                format!("{:.6}", c.recall),
                format!("{:.6}", c.f1),
                c.support_zero.to_string(),
            ])
            .map_err(csv_err)?;
        }
        for (name, a) in [("micro", self.micro), ("macro", self.macro_)] {
            w.write_record([
                name.to_owned(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                format!("{:.6}", a.precision),
                format!("{:.6}", a.recall),
                format!("{:.6}", a.f1),
                String::new(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}
