//! Surrogate generation: consistent fictitious replacements, one date
//! offset per patient, and removal of contact details.

mod dates;
mod stream;

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dates::WrittenDate;
pub use stream::{
    assign_pseudo_ids, candidate_pseudo_id, derive_patient_stream, fnv1a64, splitmix64, IdKind,
    PatientStream, PseudoIdMap,
};

use crate::detect::{detect_corpus, normalize, AnnotatedDocument, DetectorConfig, Lexicon, LexiconSet};
use crate::error::{Error, Result};
use crate::model::{codepoint_len, shift_date, AppliedReplacement, CalendarDate, DeidDocument, PhiCategory, PhiSpan, RawDocument};

const NAME_PARTICLES: &[&str] = &["de", "du", "des", "van", "le", "la", "der", "den"];
const STREET_KEYWORDS: &[&str] = &["rue", "avenue", "boulevard", "chaussée", "place"];
const FEMALE_TITLES: &[&str] = &["mme", "madame", "mlle", "mademoiselle"];
const SYLLABLES: &[&str] = &[
    "ba", "ri", "lo", "ne", "ta", "mo", "vel", "dan", "ser", "gi", "pa", "lu", "cor", "min", "ste",
    "ra", "bou", "chal", "fer", "vin",
];
const MAX_DRAWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "k")]
pub enum AgePolicy {
    #[default]
    Keep,
    /// Add a nonzero offset drawn uniformly from `-k..=k`.
    Jitter(u32),
}

/// Sampling pool over one lexicon, weighted when the lexicon carries
/// frequencies.
#[derive(Debug, Clone)]
struct Pool {
    words: Vec<String>,
    weights: Option<WeightedIndex<f64>>,
}

impl Pool {
    fn new(lex: &Lexicon) -> Self {
        let words: Vec<String> = lex.entries().iter().map(|e| e.display.clone()).collect();
        let weights = if lex.is_weighted() && !words.is_empty() {
            WeightedIndex::new(lex.entries().iter().map(|e| e.weight)).ok()
        } else {
            None
        };
        Pool { words, weights }
    }

    fn union(a: &Lexicon, b: &Lexicon) -> Self {
        let mut all = a.clone();
        all.extend_from(b);
        Pool::new(&all)
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Option<&str> {
        if self.words.is_empty() {
            return None;
        }
        let i = match &self.weights {
            Some(w) => w.sample(rng),
            None => rng.random_range(0..self.words.len()),
        };
        Some(&self.words[i])
    }
}

#[derive(Debug, Clone)]
struct Pools {
    female: Pool,
    male: Pool,
    first: Pool,
    last: Pool,
    cities: Pool,
    institutions: Pool,
    female_keys: BTreeSet<String>,
    male_keys: BTreeSet<String>,
}

impl Pools {
    fn new(lex: &LexiconSet) -> Self {
        let keys = |l: &Lexicon| l.entries().iter().map(|e| e.key.clone()).collect();
        Pools {
            female: Pool::new(&lex.female_first_names),
            male: Pool::new(&lex.male_first_names),
            first: Pool::union(&lex.female_first_names, &lex.male_first_names),
            last: Pool::new(&lex.last_names),
            cities: Pool::new(&lex.cities),
            institutions: Pool::new(&lex.institutions),
            female_keys: keys(&lex.female_first_names),
            male_keys: keys(&lex.male_first_names),
        }
    }
}

/// How spans are rewritten.
#[derive(Debug, Clone)]
pub struct SurrogatePolicy {
    pub master_seed: u64,
    pub date_shift_range: (i64, i64),
    pub removal_categories: BTreeSet<PhiCategory>,
    pub age_policy: AgePolicy,
    lexicons: LexiconSet,
    pools: Pools,
}

impl SurrogatePolicy {
    pub fn new(master_seed: u64, lexicons: LexiconSet) -> Self {
        SurrogatePolicy {
            master_seed,
            date_shift_range: (-1000, 1000),
            removal_categories: [PhiCategory::PhoneNumber, PhiCategory::UrlEmail].into(),
            age_policy: AgePolicy::Keep,
            pools: Pools::new(&lexicons),
            lexicons,
        }
    }

    pub fn lexicons(&self) -> &LexiconSet {
        &self.lexicons
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.date_shift_range;
        if lo > hi {
            return Err(Error::invalid(format!("date_shift_range ({lo}, {hi}) is empty")));
        }
        Ok(())
    }
}

/// Everything needed to pseudonymize one patient consistently.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PatientSurrogates {
    pub pseudo_id: String,
    pub date_offset_days: i64,
    /// Category, then normalized original, to replacement.
    pub replacements: BTreeMap<PhiCategory, BTreeMap<String, String>>,
    /// Normalized words of the patient's original PHI; no surrogate may
    /// contain one.
    #[serde(skip)]
    reserved: BTreeSet<String>,
}

impl PatientSurrogates {
    fn new(policy: &SurrogatePolicy, patient_id: &str, pseudo_id: String) -> Self {
        let mut stream = derive_patient_stream(policy.master_seed, patient_id);
        let (lo, hi) = policy.date_shift_range;
        let mut offset = stream.rng().random_range(lo..=hi);
        // zero would leave every date untouched; redraw unless it is the
        // only choice
        while offset == 0 && (lo, hi) != (0, 0) {
            offset = stream.rng().random_range(lo..=hi);
        }
        PatientSurrogates {
            pseudo_id,
            date_offset_days: offset,
            replacements: BTreeMap::new(),
            reserved: BTreeSet::new(),
        }
    }

    /// Marks the words of `spans` as unusable in surrogates.
    pub fn reserve(&mut self, spans: &[PhiSpan]) {
        for s in spans {
            for w in normalize(&s.surface).split(|c: char| !c.is_alphanumeric()) {
                if w.chars().count() >= 3 && !w.chars().all(|c| c.is_ascii_digit()) {
                    self.reserved.insert(w.to_owned());
                }
            }
        }
    }

    fn acceptable(&self, category: PhiCategory, original: &str, candidate: &str) -> bool {
        let key = normalize(candidate);
        if key.is_empty() || key == normalize(original) {
            return false;
        }
        if let Some(table) = self.replacements.get(&category) {
            if table.values().any(|v| normalize(v) == key) {
                return false;
            }
        }
        !self.reserved.iter().any(|w| key.contains(w.as_str()))
    }
}

impl PartialEq for PatientSurrogates {
    fn eq(&self, other: &Self) -> bool {
        self.pseudo_id == other.pseudo_id
            && self.date_offset_days == other.date_offset_days
            && self.replacements == other.replacements
    }
}

/// Per-patient surrogate state, persisted as JSON keyed by patient id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurrogateMap {
    pub patients: BTreeMap<String, PatientSurrogates>,
}

impl SurrogateMap {
    pub fn new() -> Self {
        Self::default()
    }

    fn entry(&mut self, policy: &SurrogatePolicy, patient_id: &str) -> &mut PatientSurrogates {
        self.patients.entry(patient_id.to_owned()).or_insert_with(|| {
            let pseudo = candidate_pseudo_id(policy.master_seed, IdKind::Patient, patient_id);
            PatientSurrogates::new(policy, patient_id, pseudo)
        })
    }
}

/// Rewrites one annotated document, updating the patient's entry in `map`.
pub fn apply_surrogates(
    annotated: &AnnotatedDocument,
    policy: &SurrogatePolicy,
    map: &mut SurrogateMap,
) -> Result<DeidDocument> {
    policy.validate()?;
    let entry = map.entry(policy, &annotated.doc.patient_id);
    entry.reserve(&annotated.spans);
    rewrite(annotated, policy, entry)
}

fn rewrite(annotated: &AnnotatedDocument, policy: &SurrogatePolicy, entry: &mut PatientSurrogates) -> Result<DeidDocument> {
    annotated.validate()?;
    let doc = &annotated.doc;
    let chars: Vec<char> = doc.text.chars().collect();
    let mut out = String::with_capacity(doc.text.len());
    let mut out_len = 0usize;
    let mut cursor = 0usize;
    let mut applied: Vec<AppliedReplacement> = Vec::with_capacity(annotated.spans.len());

    for span in &annotated.spans {
        if span.start < cursor {
            // the previous removal swallowed whitespace this span does not
            // start with, so this cannot happen for valid input
            return Err(Error::invalid(format!("span {}..{} overlaps a removal", span.start, span.end)));
        }
        for &c in &chars[cursor..span.start] {
            out.push(c);
        }
        out_len += span.start - cursor;
        cursor = span.end;

        if policy.removal_categories.contains(&span.category) {
            let left_ws = out.chars().next_back().is_some_and(char::is_whitespace);
            let right_ws = chars.get(span.end).is_some_and(|c| c.is_whitespace());
            if left_ws && right_ws {
                let run_end = chars[span.end..]
                    .iter()
                    .position(|c| !c.is_whitespace())
                    .map_or(chars.len(), |p| span.end + p);
                if let Some(nl) = chars[span.end..run_end].iter().position(|&c| c == '\n' || c == '\r') {
                    cursor = span.end + nl;
                    while out.ends_with(|c: char| c.is_whitespace() && c != '\n' && c != '\r') {
                        out.pop();
                        out_len -= 1;
                    }
                    for a in applied.iter_mut().rev() {
                        if a.output_start <= out_len {
                            break;
                        }
                        a.output_start = out_len;
                    }
                } else {
                    cursor = run_end;
                }
            }
            applied.push(AppliedReplacement {
                span: span.clone(),
                replacement: String::new(),
                output_start: out_len,
            });
            continue;
        }

        let replacement = replacement_for(span, &chars, policy, entry)?;
        applied.push(AppliedReplacement {
            span: span.clone(),
            replacement: replacement.clone(),
            output_start: out_len,
        });
        out_len += codepoint_len(&replacement);
        out.push_str(&replacement);
    }
    for &c in &chars[cursor..] {
        out.push(c);
    }

    Ok(DeidDocument {
        doc_id: doc.doc_id.clone(),
        pseudo_patient_id: entry.pseudo_id.clone(),
        date: shift_date(doc.date, entry.date_offset_days)?,
        text: out,
        applied,
    })
}

fn replacement_for(span: &PhiSpan, chars: &[char], policy: &SurrogatePolicy, entry: &mut PatientSurrogates) -> Result<String> {
    match span.category {
        PhiCategory::Date => Ok(match WrittenDate::parse(&span.surface) {
            Some(d) => d.shifted(entry.date_offset_days)?.render(),
            None => consistent(span, policy, entry, false, |rng, _| Some(scramble_digits(&span.surface, rng)))?,
        }),
        PhiCategory::Age => match policy.age_policy {
            AgePolicy::Keep => Ok(span.surface.clone()),
            AgePolicy::Jitter(k) => {
                let mut rng = stream_for(policy, &span.surface, span.category, &entry.pseudo_id);
                Ok(jitter_age(&span.surface, k, &mut rng))
            }
        },
        PhiCategory::IdNumber | PhiCategory::PhoneNumber | PhiCategory::UrlEmail => {
            consistent(span, policy, entry, false, |rng, _| Some(scramble_digits(&span.surface, rng)))
        }
        PhiCategory::PatientName | PhiCategory::PersonName => {
            let female = preceded_by_female_title(chars, span.start);
            name_surrogate(span, policy, entry, female)
        }
        PhiCategory::Location => consistent(span, policy, entry, true, |rng, pools| location(&span.surface, rng, pools)),
        PhiCategory::Institution => consistent(span, policy, entry, true, |rng, pools| {
            pools
                .institutions
                .draw(rng)
                .map(str::to_owned)
                .or_else(|| Some(format!("Clinique {}", invented_word(rng))))
                .map(|s| match_case(&span.surface, &s))
        }),
    }
}

fn stream_for(policy: &SurrogatePolicy, key: &str, category: PhiCategory, pseudo_id: &str) -> ChaCha8Rng {
    derive_patient_stream(policy.master_seed, pseudo_id).child(&format!("{}|{}", category.name(), normalize(key)))
}

/// Looks up or creates the replacement for a whole span.
fn consistent(
    span: &PhiSpan,
    policy: &SurrogatePolicy,
    entry: &mut PatientSurrogates,
    check_reserved: bool,
    mut generate: impl FnMut(&mut ChaCha8Rng, &Pools) -> Option<String>,
) -> Result<String> {
    let key = normalize(&span.surface);
    if let Some(r) = entry.replacements.get(&span.category).and_then(|t| t.get(&key)) {
        return Ok(r.clone());
    }
    let mut rng = stream_for(policy, &span.surface, span.category, &entry.pseudo_id);
    for attempt in 0..MAX_DRAWS {
        let Some(mut cand) = generate(&mut rng, &policy.pools) else { break };
        if attempt >= MAX_DRAWS / 2 && check_reserved {
            // the lexicon is exhausted; invent a word instead
            cand = match_case(&span.surface, &invented_word(&mut rng));
        }
        let ok = if check_reserved {
            entry.acceptable(span.category, &span.surface, &cand)
        } else {
            cand != span.surface && !entry.replacements.get(&span.category).is_some_and(|t| t.values().any(|v| *v == cand))
        };
        if ok {
            entry.replacements.entry(span.category).or_default().insert(key, cand.clone());
            return Ok(cand);
        }
    }
    Err(Error::Numerical(format!(
        "no admissible {} surrogate for a span of length {}",
        span.category,
        span.len()
    )))
}

/// Replaces names token by token so that a surname gets the same surrogate
/// alone or after a first name.
fn name_surrogate(span: &PhiSpan, policy: &SurrogatePolicy, entry: &mut PatientSurrogates, female_title: bool) -> Result<String> {
    let pieces: Vec<&str> = span.surface.split_inclusive(char::is_whitespace).collect();
    let n = pieces.len();
    let mut out = String::with_capacity(span.surface.len());
    for (i, raw) in pieces.iter().enumerate() {
        let word = raw.trim_end();
        let gap = &raw[word.len()..];
        let lower = normalize(word);
        let replaced = if NAME_PARTICLES.contains(&lower.as_str()) && word.chars().all(|c| !c.is_uppercase()) {
            word.to_owned()
        } else if let Some((prefix, rest)) = split_elision(word) {
            format!("{prefix}{}", name_token(rest, span.category, policy, entry, false, false)?)
        } else {
            let is_first = (i + 1 < n || n == 1)
                && (policy.pools.female_keys.contains(&lower) || policy.pools.male_keys.contains(&lower));
            name_token(word, span.category, policy, entry, is_first, female_title)?
        };
        out.push_str(&replaced);
        out.push_str(gap);
    }
    Ok(out)
}

fn split_elision(word: &str) -> Option<(&str, &str)> {
    let mut it = word.char_indices();
    let (_, c0) = it.next()?;
    let (i1, c1) = it.next()?;
    if matches!(c0, 'd' | 'D' | 'l' | 'L') && matches!(c1, '\'' | '\u{2019}') {
        let cut = i1 + c1.len_utf8();
        (cut < word.len()).then(|| (&word[..cut], &word[cut..]))
    } else {
        None
    }
}

fn name_token(
    word: &str,
    category: PhiCategory,
    policy: &SurrogatePolicy,
    entry: &mut PatientSurrogates,
    is_first: bool,
    female_title: bool,
) -> Result<String> {
    let key = normalize(word);
    let stored = entry
        .replacements
        .get(&category)
        .and_then(|t| t.get(&key))
        .cloned();
    if let Some(r) = stored {
        return Ok(match_case(word, &r));
    }
    let mut rng = stream_for(policy, word, category, &entry.pseudo_id);
    let initial = word.chars().count() == 2 && word.ends_with('.');
    let pools = &policy.pools;
    let pool = if is_first {
        let female = female_title || (pools.female_keys.contains(&key) && !pools.male_keys.contains(&key));
        let male = !female_title && pools.male_keys.contains(&key) && !pools.female_keys.contains(&key);
        if female {
            &pools.female
        } else if male {
            &pools.male
        } else {
            &pools.first
        }
    } else {
        &pools.last
    };
    for attempt in 0..MAX_DRAWS {
        let cand = if initial {
            let c = (b'A' + rng.random_range(0..26u8)) as char;
            format!("{c}.")
        } else {
            match pool.draw(&mut rng) {
                Some(w) if attempt < MAX_DRAWS / 2 => w.to_owned(),
                _ => invented_word(&mut rng),
            }
        };
        let ok = if initial {
            normalize(&cand) != key
        } else {
            entry.acceptable(category, word, &cand)
        };
        if ok {
            entry.replacements.entry(category).or_default().insert(key, cand.clone());
            return Ok(match_case(word, &cand));
        }
    }
    Err(Error::Numerical("no admissible name surrogate".into()))
}

fn preceded_by_female_title(chars: &[char], start: usize) -> bool {
    let mut i = start;
    while i > 0 && (chars[i - 1].is_whitespace() || chars[i - 1] == '.') {
        i -= 1;
    }
    let end = i;
    while i > 0 && chars[i - 1].is_alphabetic() {
        i -= 1;
    }
    let word: String = chars[i..end].iter().collect();
    FEMALE_TITLES.contains(&normalize(&word).as_str())
}

fn location(surface: &str, rng: &mut ChaCha8Rng, pools: &Pools) -> Option<String> {
    let words: Vec<&str> = surface.split_whitespace().collect();
    let first = words.first()?;
    let numeric = first.chars().all(|c| c.is_ascii_digit());
    let draw = |pool: &Pool, rng: &mut ChaCha8Rng| pool.draw(rng).map(str::to_owned).unwrap_or_else(|| invented_word(rng));
    let cand = if numeric && words.len() >= 3 && STREET_KEYWORDS.contains(&normalize(words[1]).as_str()) {
        let street = draw(&pools.last, rng);
        format!("{} {} {street}", random_digits(first.len().min(3), rng), words[1])
    } else if numeric && words.len() >= 2 && matches!(first.len(), 4 | 5) {
        let city = draw(&pools.cities, rng);
        format!("{} {city}", random_digits(first.len(), rng))
    } else {
        draw(&pools.cities, rng)
    };
    Some(match_case(surface, &cand))
}

/// Same shape with every digit and letter redrawn.
fn scramble_digits(surface: &str, rng: &mut ChaCha8Rng) -> String {
    surface
        .chars()
        .map(|c| {
            if c.is_ascii_digit() {
                char::from(b'0' + rng.random_range(0..10u8))
            } else if c.is_alphabetic() {
                let base = if c.is_uppercase() { b'A' } else { b'a' };
                char::from(base + rng.random_range(0..26u8))
            } else {
                c
            }
        })
        .collect()
}

fn random_digits(n: usize, rng: &mut ChaCha8Rng) -> String {
    (0..n)
        .map(|i| {
            let lo = if i == 0 { 1 } else { 0 };
            char::from(b'0' + rng.random_range(lo..10u8))
        })
        .collect()
}

fn jitter_age(surface: &str, k: u32, rng: &mut ChaCha8Rng) -> String {
    let digits: String = surface.chars().take_while(char::is_ascii_digit).collect();
    let Ok(age) = digits.parse::<i64>() else { return surface.to_owned() };
    if k == 0 {
        return surface.to_owned();
    }
    let k = k as i64;
    let mut delta = 0;
    while delta == 0 {
        delta = rng.random_range(-k..=k);
    }
    let new = if age + delta < 0 { age + delta.abs() } else { age + delta };
    format!("{new}{}", &surface[digits.len()..])
}

fn invented_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=3);
    let word: String = (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
    let mut cs = word.chars();
    cs.next().map(|c| c.to_uppercase().chain(cs).collect()).unwrap_or_default()
}

/// Uppercases `replacement` when `original` is written in capitals.
fn match_case(original: &str, replacement: &str) -> String {
    let letters: Vec<char> = original.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        replacement.to_uppercase()
    } else {
        replacement.to_owned()
    }
}

/// A replacement as recorded in the surrogate corpus, in output coordinates
/// and without the original text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedMarker {
    pub category: PhiCategory,
    pub start: usize,
    pub end: usize,
    pub replacement: String,
}

/// One line of the surrogate corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateRecord {
    pub doc_id: String,
    pub patient_id: String,
    pub date: CalendarDate,
    pub text: String,
    pub known_patient_names: Vec<(String, String)>,
    pub applied: Vec<AppliedMarker>,
}

impl From<&DeidDocument> for SurrogateRecord {
    fn from(d: &DeidDocument) -> Self {
        SurrogateRecord {
            doc_id: d.doc_id.clone(),
            patient_id: d.pseudo_patient_id.clone(),
            date: d.date,
            text: d.text.clone(),
            known_patient_names: Vec::new(),
            applied: d
                .applied
                .iter()
                .map(|a| AppliedMarker {
                    category: a.span.category,
                    start: a.output_start,
                    end: a.output_start + codepoint_len(&a.replacement),
                    replacement: a.replacement.clone(),
                })
                .collect(),
        }
    }
}

/// One line of the audit log. It holds the original surfaces and must be
/// protected like the surrogate map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub doc_id: String,
    pub patient_id: String,
    pub pseudo_patient_id: String,
    pub applied: Vec<AppliedReplacement>,
}

/// Output of [`pseudonymize_corpus`], in corpus order.
#[derive(Debug, Clone)]
pub struct PseudonymizedCorpus {
    pub annotated: Vec<AnnotatedDocument>,
    pub documents: Vec<DeidDocument>,
}

impl PseudonymizedCorpus {
    pub fn records(&self) -> impl Iterator<Item = SurrogateRecord> + '_ {
        self.documents.iter().map(SurrogateRecord::from)
    }

    pub fn audit(&self) -> impl Iterator<Item = AuditRecord> + '_ {
        self.annotated.iter().zip(&self.documents).map(|(a, d)| AuditRecord {
            doc_id: d.doc_id.clone(),
            patient_id: a.doc.patient_id.clone(),
            pseudo_patient_id: d.pseudo_patient_id.clone(),
            applied: d.applied.clone(),
        })
    }
}

/// Detects and rewrites a whole corpus. Patients are processed in parallel,
/// each patient's documents sequentially in corpus order, so the result does
/// not depend on the thread count.
pub fn pseudonymize_corpus(
    docs: &[RawDocument],
    cfg: &DetectorConfig,
    policy: &SurrogatePolicy,
    map: &mut SurrogateMap,
) -> Result<PseudonymizedCorpus> {
    policy.validate()?;
    let mut ids = BTreeSet::new();
    for d in docs {
        if d.patient_id.is_empty() {
            return Err(Error::invalid(format!("document {} has an empty patient_id", d.doc_id)));
        }
        if !ids.insert(d.doc_id.as_str()) {
            return Err(Error::invalid(format!("duplicate doc_id `{}`", d.doc_id)));
        }
    }
    let annotated = detect_corpus(docs, cfg);

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        groups.entry(d.patient_id.as_str()).or_default().push(i);
    }
    let new_patients: Vec<String> = groups
        .keys()
        .filter(|p| !map.patients.contains_key(**p))
        .map(|p| p.to_string())
        .collect();
    let fresh = assign_pseudo_ids(&new_patients, &[], policy.master_seed)?;
    let taken: BTreeSet<&str> = map.patients.values().map(|p| p.pseudo_id.as_str()).collect();
    if let Some(dup) = fresh.patients.values().find(|v| taken.contains(v.as_str())) {
        return Err(Error::IdCollision(dup.clone()));
    }

    let mut work: Vec<(String, PatientSurrogates, Vec<usize>)> = groups
        .into_iter()
        .map(|(pid, idx)| {
            let entry = map
                .patients
                .remove(pid)
                .unwrap_or_else(|| PatientSurrogates::new(policy, pid, fresh.patients[pid].clone()));
            (pid.to_owned(), entry, idx)
        })
        .collect();

    let results: Vec<Result<Vec<(usize, DeidDocument)>>> = work
        .par_iter_mut()
        .map(|(_, entry, idx)| {
            for &i in idx.iter() {
                entry.reserve(&annotated[i].spans);
            }
            idx.iter()
                .map(|&i| rewrite(&annotated[i], policy, entry).map(|d| (i, d)))
                .collect()
        })
        .collect();

    let mut slots: Vec<Option<DeidDocument>> = vec![None; docs.len()];
    for r in results {
        for (i, d) in r? {
            slots[i] = Some(d);
        }
    }
    for (pid, entry, _) in work {
        map.patients.insert(pid, entry);
    }
    Ok(PseudonymizedCorpus {
        annotated,
        documents: slots.into_iter().map(|d| d.expect("every document rewritten")).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::detect;

    fn lexicons() -> LexiconSet {
        LexiconSet {
            female_first_names: Lexicon::from_entries("f", ["Marie", "Anne", "Sophie", "Claire", "Julie"]),
            male_first_names: Lexicon::from_entries("m", ["Jean", "Pierre", "Luc", "Marc", "Paul"]),
            last_names: Lexicon::from_entries("l", ["Dupont", "Martin", "Lambert", "Dubois", "Peeters", "Janssens", "Maes"]),
            cities: Lexicon::from_entries("c", ["Bruxelles", "Liège", "Namur", "Mons", "Wavre"]),
            institutions: Lexicon::from_entries("i", ["Clinique Saint-Luc", "CHU Tivoli", "Hôpital Erasme"]),
            months: crate::detect::months::default_month_lexicon(),
        }
    }

    fn policy() -> SurrogatePolicy {
        SurrogatePolicy::new(42, lexicons())
    }

    fn raw(id: &str, pid: &str, text: &str) -> RawDocument {
        RawDocument {
            doc_id: id.into(),
            patient_id: pid.into(),
            date: "2015-01-12".parse().unwrap(),
            text: text.into(),
            known_patient_names: vec![],
        }
    }

    fn annotated(text: &str, spans: &[(usize, usize, PhiCategory)]) -> AnnotatedDocument {
        AnnotatedDocument {
            doc: raw("d1", "p1", text),
            spans: spans.iter().map(|&(s, e, c)| PhiSpan::from_text(text, s, e, c).unwrap()).collect(),
        }
    }

    #[test]
    fn date_shift_keeps_format() {
        let p = policy();
        let mut map = SurrogateMap::new();
        map.patients.insert(
            "p1".into(),
            PatientSurrogates {
                pseudo_id: "x".into(),
                date_offset_days: 1,
                ..Default::default()
            },
        );
        let out = apply_surrogates(&annotated("RDV le 12/01/2015", &[(7, 17, PhiCategory::Date)]), &p, &mut map).unwrap();
        assert_eq!(out.text, "RDV le 13/01/2015");
        assert_eq!(out.date.to_string(), "2015-01-13");
    }

    #[test]
    fn removal_collapses_whitespace() {
        let p = policy();
        let mut map = SurrogateMap::new();
        let out = apply_surrogates(&annotated("Tel: +32 2 764 11 11.", &[(5, 20, PhiCategory::PhoneNumber)]), &p, &mut map).unwrap();
        assert_eq!(out.text, "Tel: .");
        let out = apply_surrogates(
            &annotated("Appeler le 02 764 11 11 demain", &[(11, 23, PhiCategory::PhoneNumber)]),
            &p,
            &mut map,
        )
        .unwrap();
        assert_eq!(out.text, "Appeler le demain");
        let out = apply_surrogates(&annotated("site www.x.be \nfin", &[(5, 13, PhiCategory::UrlEmail)]), &p, &mut map).unwrap();
        assert_eq!(out.text, "site\nfin");
        assert_eq!(out.applied[0].output_start, 4);
    }

    #[test]
    fn offsets_of_later_spans_follow_the_rewrite() {
        let p = policy();
        let mut map = SurrogateMap::new();
        let text = "Tel 0470 12 34 56 puis Dr Dupont le 3 mai 2016.";
        let cfg = LexiconSet::detector_config(&lexicons());
        let a = detect(&raw("d", "p1", text), &cfg);
        let out = apply_surrogates(&a, &p, &mut map).unwrap();
        for r in &out.applied {
            let got: String = out.text.chars().skip(r.output_start).take(codepoint_len(&r.replacement)).collect();
            assert_eq!(got, r.replacement);
            assert_eq!(crate::slice_codepoints(text, r.span.start, r.span.end).unwrap(), r.span.surface);
        }
        assert!(!out.text.contains("Dupont"));
    }

    #[test]
    fn names_are_consistent_across_documents() {
        let p = policy();
        let cfg = lexicons().detector_config();
        let docs = vec![
            raw("a", "p1", "Vu par le Dr Dupont."),
            raw("b", "p1", "Avis de Monsieur Dupont demandé."),
            raw("c", "p2", "Vu par le Dr Dupont."),
        ];
        let mut map = SurrogateMap::new();
        let out = pseudonymize_corpus(&docs, &cfg, &p, &mut map).unwrap();
        let rep = |i: usize| out.documents[i].applied[0].replacement.clone();
        assert_eq!(rep(0), rep(1));
        assert_ne!(rep(0), "Dupont");
        assert_eq!(out.documents[0].pseudo_patient_id, out.documents[1].pseudo_patient_id);
        assert_ne!(out.documents[0].pseudo_patient_id, out.documents[2].pseudo_patient_id);
    }

    #[test]
    fn name_tokens_share_surrogates() {
        let p = policy();
        let mut map = SurrogateMap::new();
        let a = annotated("Jean Dupont et Dupont", &[(0, 11, PhiCategory::PersonName), (15, 21, PhiCategory::PersonName)]);
        let out = apply_surrogates(&a, &p, &mut map).unwrap();
        let full = &out.applied[0].replacement;
        let last = &out.applied[1].replacement;
        assert!(full.ends_with(last.as_str()), "{full} / {last}");
        let first = full.split(' ').next().unwrap();
        assert!(["Marie", "Anne", "Sophie", "Claire", "Julie", "Pierre", "Luc", "Marc", "Paul"].contains(&first));
    }

    #[test]
    fn female_title_selects_female_names() {
        let p = policy();
        for seed in 0..20u64 {
            let mut p = p.clone();
            p.master_seed = seed;
            let mut map = SurrogateMap::new();
            let a = annotated("Mme Jean Dupont", &[(4, 15, PhiCategory::PersonName)]);
            let out = apply_surrogates(&a, &p, &mut map).unwrap();
            let first = out.applied[0].replacement.split(' ').next().unwrap().to_owned();
            assert!(["Marie", "Anne", "Sophie", "Claire", "Julie"].contains(&first.as_str()), "{first}");
        }
    }

    #[test]
    fn uppercase_and_particles() {
        let p = policy();
        let mut map = SurrogateMap::new();
        let a = annotated("DR DUPONT", &[(3, 9, PhiCategory::PersonName)]);
        let out = apply_surrogates(&a, &p, &mut map).unwrap();
        let r = &out.applied[0].replacement;
        assert_eq!(r, &r.to_uppercase());
        let a = annotated("Dr Jean de Martin", &[(3, 17, PhiCategory::PersonName)]);
        let out = apply_surrogates(&a, &p, &mut map).unwrap();
        assert!(out.applied[0].replacement.contains(" de "));
    }

    #[test]
    fn id_numbers_keep_shape() {
        let p = policy();
        let mut map = SurrogateMap::new();
        let a = annotated("NN 85.07.30-033.61", &[(3, 18, PhiCategory::IdNumber)]);
        let out = apply_surrogates(&a, &p, &mut map).unwrap();
        let r = &out.applied[0].replacement;
        assert_ne!(r, "85.07.30-033.61");
        assert_eq!(r.len(), 15);
        assert_eq!(&r[2..3], ".");
        assert_eq!(&r[8..9], "-");
    }

    #[test]
    fn age_policies() {
        let mut p = policy();
        let mut map = SurrogateMap::new();
        let a = annotated("âgé de 67 ans", &[(7, 13, PhiCategory::Age)]);
        assert_eq!(apply_surrogates(&a, &p, &mut map).unwrap().text, "âgé de 67 ans");
        p.age_policy = AgePolicy::Jitter(3);
        let out = apply_surrogates(&a, &p, &mut map).unwrap();
        let n: i64 = out.applied[0].replacement.trim_end_matches(" ans").parse().unwrap();
        assert!(n != 67 && (64..=70).contains(&n));
    }

    #[test]
    fn offsets_stay_in_range_and_nonzero() {
        let mut p = policy();
        p.date_shift_range = (-5, 5);
        for i in 0..200 {
            let e = PatientSurrogates::new(&p, &format!("P{i}"), String::new());
            assert!((-5..=5).contains(&e.date_offset_days) && e.date_offset_days != 0);
        }
        p.date_shift_range = (3, 1);
        assert!(p.validate().is_err());
    }

    #[test]
    fn reserved_words_are_never_used() {
        let p = policy();
        let mut map = SurrogateMap::new();
        // "Martin" is the patient's own name elsewhere, so Dupont cannot
        // become Martin
        let a = annotated("Dr Dupont, Dr Martin, Dr Lambert", &[
            (3, 9, PhiCategory::PersonName),
            (14, 20, PhiCategory::PersonName),
            (25, 32, PhiCategory::PersonName),
        ]);
        let out = apply_surrogates(&a, &p, &mut map).unwrap();
        for r in &out.applied {
            assert!(!["Dupont", "Martin", "Lambert"].contains(&r.replacement.as_str()));
        }
        let reps: BTreeSet<_> = out.applied.iter().map(|r| r.replacement.clone()).collect();
        assert_eq!(reps.len(), 3);
    }

    #[test]
    fn corpus_output_is_reproducible() {
        let p = policy();
        let cfg = lexicons().detector_config();
        let docs: Vec<RawDocument> = (0..30)
            .map(|i| raw(&format!("d{i}"), &format!("p{}", i % 7), "Dr Martin, Namur, le 3 mai 2016. Tel 0470 12 34 56."))
            .collect();
        let run = || {
            let mut map = SurrogateMap::new();
            let out = pseudonymize_corpus(&docs, &cfg, &p, &mut map).unwrap();
            (serde_json::to_string(&out.records().collect::<Vec<_>>()).unwrap(), serde_json::to_string(&map).unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn map_round_trips_as_json() {
        let p = policy();
        let mut map = SurrogateMap::new();
        apply_surrogates(&annotated("Dr Dupont", &[(3, 9, PhiCategory::PersonName)]), &p, &mut map).unwrap();
        let json = serde_json::to_string(&map).unwrap();
        assert!(json.contains("\"PersonName\""));
        let back: SurrogateMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back, map);
    }
}
