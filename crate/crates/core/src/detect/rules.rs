//! The nine detection rules. Each rule returns raw candidates as
//! `(start, end, category)` code-point ranges; overlaps are resolved later.

use std::sync::OnceLock;

use regex::Regex;

use super::lexicon::{normalize, Lexicon};
use super::months::month_number;
use super::tokens::{case_view, tokenize_chars, Token};
use super::DetectorConfig;
use crate::model::{CalendarDate, OffsetMap, PhiCategory};

pub type Candidate = (usize, usize, PhiCategory);

/// Particles that may sit inside a person name.
const NAME_PARTICLES: &[&str] = &["de", "du", "des", "van", "le", "la"];
/// Particles allowed in street and institution names.
const PLACE_PARTICLES: &[&str] = &["de", "du", "des", "la", "le", "les", "l", "d", "et"];
const STREET_KEYWORDS: &[&str] = &["rue", "avenue", "boulevard", "chaussée", "place"];
const INSTITUTION_KEYWORDS: &[&[&str]] = &[
    &["clinique"],
    &["hôpital"],
    &["hopital"],
    &["chu"],
    &["maison", "de", "repos"],
];

/// Pre-tokenized document shared by all rules.
pub struct Scanner<'a> {
    text: &'a str,
    chars: Vec<char>,
    view: Vec<char>,
    tokens: Vec<Token>,
    offsets: OffsetMap,
}

fn is_hspace(c: char) -> bool {
    c.is_whitespace() && c != '\n' && c != '\r'
}

impl<'a> Scanner<'a> {
    pub fn new(text: &'a str) -> Self {
        let chars: Vec<char> = text.chars().collect();
        let view = case_view(&chars);
        let tokens = tokenize_chars(&chars);
        Scanner {
            text,
            chars,
            view,
            tokens,
            offsets: OffsetMap::new(text),
        }
    }

    fn capitalized(&self, t: &Token) -> bool {
        self.view[t.start].is_uppercase()
    }

    /// A single uppercase letter immediately followed by a period.
    fn is_initial(&self, t: &Token) -> bool {
        t.end - t.start == 1
            && self.view[t.start].is_alphabetic()
            && self.view[t.start].is_uppercase()
            && self.chars.get(t.end) == Some(&'.')
    }

    /// Non-empty horizontal whitespace between two offsets.
    fn hgap(&self, from: usize, to: usize) -> bool {
        from < to && self.chars[from..to].iter().all(|&c| is_hspace(c))
    }

    fn slice(&self, start: usize, end: usize) -> &str {
        &self.text[self.offsets.byte(start)..self.offsets.byte(end)]
    }

    /// Whether token `j` continues a phrase ending at `prev_end`, where the
    /// previous token was `prev`.
    fn continues(&self, prev: &Token, prev_end: usize, next: &Token) -> bool {
        if self.hgap(prev_end, next.start) {
            return true;
        }
        // elided particle: l'Alleud, d'Hondt
        let elided = prev.lower == "l" || prev.lower == "d";
        elided
            && next.start == prev_end + 1
            && matches!(self.chars[prev_end], '\'' | '\u{2019}')
    }

    /// Consumes a run of capitalized tokens and particles starting at token
    /// `first`. Returns the end offset of the last capitalized token, or
    /// `None` when the run holds no capitalized token.
    fn name_run(&self, first: usize, max_caps: usize, particles: &[&str]) -> Option<usize> {
        let mut caps = 0;
        let mut end = None;
        let mut i = first;
        while i < self.tokens.len() {
            let t = &self.tokens[i];
            let t_end;
            if self.is_initial(t) {
                t_end = t.end + 1;
                caps += 1;
                end = Some(t_end);
            } else if self.capitalized(t) && self.view[t.start].is_alphabetic() {
                t_end = t.end;
                caps += 1;
                end = Some(t_end);
            } else if particles.contains(&t.lower.as_str()) {
                t_end = t.end;
            } else {
                break;
            }
            if caps == max_caps {
                break;
            }
            match self.tokens.get(i + 1) {
                Some(next) if self.continues(t, t_end, next) => i += 1,
                _ => break,
            }
        }
        end
    }

    /// Index of the token following `i` when separated by horizontal space,
    /// after skipping an optional period directly after token `i`.
    fn next_after(&self, i: usize, allow_period: bool) -> Option<usize> {
        let t = &self.tokens[i];
        let mut end = t.end;
        if allow_period && self.chars.get(end) == Some(&'.') {
            end += 1;
        }
        let next = self.tokens.get(i + 1)?;
        self.hgap(end, next.start).then_some(i + 1)
    }

    /// Longest lexicon match starting at each token. Matching is on the
    /// normalized text, so it is case-insensitive.
    fn lexicon_hits(&self, lex: &Lexicon, require_cap: bool) -> Vec<(usize, usize, usize)> {
        let mut hits = Vec::new();
        if lex.is_empty() {
            return hits;
        }
        for i in 0..self.tokens.len() {
            let first = &self.tokens[i];
            if require_cap && !self.capitalized(first) {
                continue;
            }
            let mut best = None;
            for j in i..(i + lex.max_words()).min(self.tokens.len()) {
                if j > i && self.chars[self.tokens[j - 1].end..self.tokens[j].start].contains(&'\n') {
                    break;
                }
                let key = normalize(self.slice(first.start, self.tokens[j].end));
                if lex.contains(&key) {
                    best = Some(j);
                }
            }
            if let Some(j) = best {
                hits.push((i, j, self.tokens[j].end));
            }
        }
        hits
    }

    fn regex_hits<'s>(&'s self, re: &'s Regex) -> impl Iterator<Item = (usize, usize, regex::Captures<'a>)> + 's {
        re.captures_iter(self.text).map(|c| {
            let m = c.get(0).expect("group 0");
            (self.offsets.cp(m.start()), self.offsets.cp(m.end()), c)
        })
    }

    /// R1: known patient name components, whole-word and case-insensitive,
    /// plus `Initial. Lastname`. Adjacent matches merge into one span.
    pub fn patient_names(&self, known: &[(String, String)]) -> Vec<Candidate> {
        let mut raw: Vec<(usize, usize)> = Vec::new();
        for (first, last) in known {
            let components: Vec<String> = [first, last]
                .iter()
                .map(|s| normalize(s))
                .filter(|s| !s.is_empty())
                .collect();
            for comp in &components {
                raw.extend(self.phrase_matches(comp));
            }
            let first_n = normalize(first);
            let last_n = normalize(last);
            if let (Some(initial), false) = (first_n.chars().next(), last_n.is_empty()) {
                let lasts = self.phrase_matches(&last_n);
                for (ti, t) in self.tokens.iter().enumerate() {
                    if t.end - t.start == 1 && t.lower.starts_with(initial) && self.chars.get(t.end) == Some(&'.') {
                        if let Some(next) = self.next_after(ti, true) {
                            let ns = self.tokens[next].start;
                            if let Some(&(_, e)) = lasts.iter().find(|&&(s, _)| s == ns) {
                                raw.push((t.start, e));
                            }
                        }
                    }
                }
            }
        }
        raw.sort();
        raw.dedup();
        let mut merged: Vec<(usize, usize)> = Vec::new();
        for (s, e) in raw {
            match merged.last_mut() {
                Some(last) if s <= last.1 || self.hgap(last.1, s) => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        merged
            .into_iter()
            .map(|(s, e)| (s, e, PhiCategory::PatientName))
            .collect()
    }

    /// Token-aligned occurrences of a normalized phrase.
    fn phrase_matches(&self, phrase: &str) -> Vec<(usize, usize)> {
        let n_words = super::lexicon::word_count(phrase);
        if n_words == 0 {
            return Vec::new();
        }
        let first_word = super::tokens::tokenize(phrase).remove(0).lower;
        let mut out = Vec::new();
        for i in 0..self.tokens.len() {
            if self.tokens[i].lower != first_word || i + n_words > self.tokens.len() {
                continue;
            }
            let j = i + n_words - 1;
            let (s, e) = (self.tokens[i].start, self.tokens[j].end);
            if normalize(self.slice(s, e)) == phrase {
                out.push((s, e));
            }
        }
        out
    }

    /// R2: title triggers followed by a capitalized name run, and a
    /// first-name lexicon hit followed by a capitalized token.
    pub fn person_names(&self, cfg: &DetectorConfig) -> Vec<Candidate> {
        let mut out = Vec::new();
        let triggers: Vec<(String, bool)> = cfg
            .title_triggers
            .iter()
            .map(|t| {
                let needs_period = t.ends_with('.');
                (normalize(t.trim_end_matches('.')), needs_period)
            })
            .collect();
        for (i, t) in self.tokens.iter().enumerate() {
            let Some(&(_, needs_period)) = triggers.iter().find(|(w, _)| *w == t.lower) else {
                continue;
            };
            if needs_period && self.chars.get(t.end) != Some(&'.') {
                continue;
            }
            if let Some(next) = self.next_after(i, true) {
                if let Some(end) = self.name_run(next, 3, NAME_PARTICLES) {
                    out.push((self.tokens[next].start, end, PhiCategory::PersonName));
                }
            }
        }
        for (i, j, _) in self.lexicon_hits(&cfg.first_names, true) {
            if let Some(next) = self.next_after(j, false) {
                if !self.capitalized(&self.tokens[next]) {
                    continue;
                }
                if let Some(end) = self.name_run(next, 2, NAME_PARTICLES) {
                    out.push((self.tokens[i].start, end, PhiCategory::PersonName));
                }
            }
        }
        out
    }

    /// R3: city hits (with an adjacent postal code when present) and street
    /// addresses.
    pub fn locations(&self, cfg: &DetectorConfig) -> Vec<Candidate> {
        let mut out = Vec::new();
        for (i, _, end) in self.lexicon_hits(&cfg.cities, true) {
            let start = self.tokens[i].start;
            out.push((start, end, PhiCategory::Location));
            if i > 0 {
                let prev = &self.tokens[i - 1];
                let is_postal = matches!(prev.end - prev.start, 4 | 5)
                    && self.chars[prev.start..prev.end].iter().all(|c| c.is_ascii_digit());
                if is_postal && self.hgap(prev.end, start) {
                    out.push((prev.start, end, PhiCategory::Location));
                }
            }
        }
        for (i, t) in self.tokens.iter().enumerate() {
            let is_number = t.end - t.start <= 4 && self.chars[t.start..t.end].iter().all(|c| c.is_ascii_digit());
            if !is_number {
                continue;
            }
            let Some(kw) = self.next_after(i, false) else { continue };
            if !STREET_KEYWORDS.contains(&self.tokens[kw].lower.as_str()) {
                continue;
            }
            let Some(name) = self.next_after(kw, false) else { continue };
            if let Some(end) = self.name_run(name, 4, PLACE_PARTICLES) {
                out.push((t.start, end, PhiCategory::Location));
            }
        }
        out
    }

    /// R4: institution lexicon hits and keyword-led institution names.
    pub fn institutions(&self, cfg: &DetectorConfig) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = self
            .lexicon_hits(&cfg.institutions, true)
            .into_iter()
            .map(|(i, _, end)| (self.tokens[i].start, end, PhiCategory::Institution))
            .collect();
        for i in 0..self.tokens.len() {
            for kw in INSTITUTION_KEYWORDS {
                let Some(last) = self.keyword_at(i, kw) else { continue };
                let Some(next) = self.next_after(last, false) else { continue };
                if let Some(end) = self.name_run(next, 4, PLACE_PARTICLES) {
                    out.push((self.tokens[i].start, end, PhiCategory::Institution));
                }
            }
        }
        out
    }

    fn keyword_at(&self, i: usize, words: &[&str]) -> Option<usize> {
        let mut j = i;
        for (k, w) in words.iter().enumerate() {
            let t = self.tokens.get(j)?;
            if t.lower != *w {
                return None;
            }
            if k + 1 < words.len() {
                j = self.next_after(j, false)?;
            }
        }
        Some(j)
    }

    /// R5: numeric and textual dates. Numeric dates need one separator
    /// throughout and a valid calendar day.
    pub fn dates(&self, cfg: &DetectorConfig) -> Vec<Candidate> {
        let mut out = Vec::new();
        for re in numeric_date_res() {
            for (s, e, c) in self.regex_hits(re) {
                let d: u32 = c[1].parse().unwrap_or(0);
                let m: u32 = c[2].parse().unwrap_or(0);
                let y = expand_year(&c[3]);
                if CalendarDate::new(y, m, d).is_ok() {
                    out.push((s, e, PhiCategory::Date));
                }
            }
        }
        for (s, e, c) in self.regex_hits(textual_date_re()) {
            let word = &c[3];
            let key = normalize(word.trim_end_matches('.'));
            if !cfg.months.contains(&key) {
                continue;
            }
            let Some(m) = month_number(&key) else { continue };
            let d: u32 = c[1].parse().unwrap_or(0);
            let y: i32 = c[4].parse().unwrap_or(0);
            if CalendarDate::new(y, m, d).is_ok() {
                out.push((s, e, PhiCategory::Date));
            }
        }
        out
    }

    /// R6: `<n> ans`, also when introduced by `âgé(e) de`.
    pub fn ages(&self) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = self
            .regex_hits(age_re())
            .map(|(s, e, _)| (s, e, PhiCategory::Age))
            .collect();
        for (_, _, c) in self.regex_hits(aged_re()) {
            let m = c.get(1).expect("age group");
            out.push((self.offsets.cp(m.start()), self.offsets.cp(m.end()), PhiCategory::Age));
        }
        out
    }

    /// R7: long digit runs and Belgian national register numbers.
    pub fn id_numbers(&self, cfg: &DetectorConfig) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = self
            .regex_hits(national_number_re())
            .map(|(s, e, _)| (s, e, PhiCategory::IdNumber))
            .collect();
        let min = cfg.min_id_digits.max(1);
        let mut i = 0;
        while i < self.chars.len() {
            if self.chars[i].is_ascii_digit() && (i == 0 || !self.chars[i - 1].is_alphanumeric()) {
                let mut j = i;
                while j < self.chars.len() && self.chars[j].is_ascii_digit() {
                    j += 1;
                }
                let bounded = j == self.chars.len() || !self.chars[j].is_alphanumeric();
                if bounded && j - i >= min {
                    out.push((i, j, PhiCategory::IdNumber));
                }
                i = j;
            } else {
                i += 1;
            }
        }
        out
    }

    /// R8: `+32`, `+33` or a leading `0`, then 8 to 10 digits grouped by
    /// spaces, slashes, periods or hyphens. Groups after the first hold at
    /// most three digits, which keeps `dd/mm/yyyy hh` from matching.
    pub fn phone_numbers(&self) -> Vec<Candidate> {
        let mut out = Vec::new();
        for (s, e, c) in self.regex_hits(phone_re()) {
            let m = &c[0];
            let body = if m.starts_with('+') { &m[3..] } else { &m[1..] };
            let digits = body.chars().filter(char::is_ascii_digit).count();
            if (8..=10).contains(&digits) {
                out.push((s, e, PhiCategory::PhoneNumber));
            }
        }
        out
    }

    /// R9: e-mail addresses and URLs.
    pub fn urls_emails(&self) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = self
            .regex_hits(email_re())
            .map(|(s, e, _)| (s, e, PhiCategory::UrlEmail))
            .collect();
        for (s, _, c) in self.regex_hits(url_re()) {
            let trimmed = c[0].trim_end_matches(['.', ',', ';', ':', '!', '?', ')', '»', '"', '\'']);
            let len = trimmed.chars().count();
            if len > 4 {
                out.push((s, s + len, PhiCategory::UrlEmail));
            }
        }
        out
    }
}

/// Two-digit years pivot at 1930: 30..=99 -> 19xx, 00..=29 -> 20xx.
pub fn expand_year(y: &str) -> i32 {
    let v: i32 = y.parse().unwrap_or(0);
    if y.len() == 2 {
        if v >= 30 {
            1900 + v
        } else {
            2000 + v
        }
    } else {
        v
    }
}

macro_rules! static_re {
    ($name:ident, $pat:expr) => {
        fn $name() -> &'static Regex {
            static RE: OnceLock<Regex> = OnceLock::new();
            RE.get_or_init(|| Regex::new($pat).expect("valid regex"))
        }
    };
}

fn numeric_date_res() -> &'static [Regex; 3] {
    static RES: OnceLock<[Regex; 3]> = OnceLock::new();
    RES.get_or_init(|| {
        ["/", r"\.", "-"].map(|sep| {
            Regex::new(&format!(r"\b(\d{{1,2}}){sep}(\d{{1,2}}){sep}(\d{{4}}|\d{{2}})\b")).expect("valid regex")
        })
    })
}

static_re!(textual_date_re, r"\b(\d{1,2})(er)?[ \t\u{a0}]+(\p{L}+\.?)[ \t\u{a0}]+(\d{4})\b");
static_re!(age_re, r"\b\d{1,3}[ \t\u{a0}]+ans\b");
static_re!(aged_re, r"(?i:âgée?)[ \t\u{a0}]+de[ \t\u{a0}]+(\d{1,3}[ \t\u{a0}]+ans)\b");
static_re!(national_number_re, r"\b\d{2}\.\d{2}\.\d{2}-\d{3}\.\d{2}\b");
static_re!(phone_re, r"(?:\+3[23][ ./\-]?\d{1,4}|\b0\d{0,9})(?:[ ./\-]\d{1,3})*\b");
static_re!(email_re, r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)*\.[A-Za-z]{2,}");
static_re!(url_re, r"(?:https?://|\bwww\.)[^\s<>]+");
