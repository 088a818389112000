//! French month names.

use super::lexicon::{normalize, Lexicon};

/// Full name and conventional abbreviation for each month.
pub const MONTHS: [(&str, &str); 12] = [
    ("janvier", "janv."),
    ("février", "févr."),
    ("mars", "mars"),
    ("avril", "avr."),
    ("mai", "mai"),
    ("juin", "juin"),
    ("juillet", "juil."),
    ("août", "août"),
    ("septembre", "sept."),
    ("octobre", "oct."),
    ("novembre", "nov."),
    ("décembre", "déc."),
];

fn strip_accents(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            'é' | 'è' | 'ê' | 'ë' => 'e',
            'û' | 'ù' | 'ü' => 'u',
            'â' | 'à' => 'a',
            'î' | 'ï' => 'i',
            'ô' => 'o',
            other => other,
        })
        .collect()
}

/// Resolves a month word (full, abbreviated, with or without accents or a
/// trailing period) to 1..=12. A word resolves when, accents removed, it is a
/// prefix of exactly one month name and has at least three letters.
pub fn month_number(word: &str) -> Option<u32> {
    let w = strip_accents(&normalize(word.trim_end_matches('.')));
    if w.chars().count() < 3 {
        return None;
    }
    let mut found = None;
    for (i, (full, _)) in MONTHS.iter().enumerate() {
        if strip_accents(full).starts_with(&w) {
            if found.is_some() {
                return None;
            }
            found = Some(i as u32 + 1);
        }
    }
    found
}

/// Whether a month word was written abbreviated (shorter than the full name).
pub fn is_abbreviated(word: &str) -> bool {
    match month_number(word) {
        Some(m) => {
            let full = strip_accents(MONTHS[m as usize - 1].0);
            strip_accents(&normalize(word.trim_end_matches('.'))).len() < full.len()
        }
        None => false,
    }
}

/// The default month lexicon: full names, common abbreviations, and
/// unaccented spellings.
pub fn default_month_lexicon() -> Lexicon {
    Lexicon::from_entries(
        "months",
        [
            "janvier", "janv", "février", "fevrier", "févr", "fevr", "fév", "fev", "mars", "avril",
            "avr", "mai", "juin", "juillet", "juil", "août", "aout", "septembre", "sept", "octobre",
            "oct", "novembre", "nov", "décembre", "decembre", "déc", "dec",
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolves_variants() {
        assert_eq!(month_number("Janvier"), Some(1));
        assert_eq!(month_number("févr."), Some(2));
        assert_eq!(month_number("FEVRIER"), Some(2));
        assert_eq!(month_number("aout"), Some(8));
        assert_eq!(month_number("juil."), Some(7));
        assert_eq!(month_number("juin"), Some(6));
        assert_eq!(month_number("jui"), None);
        assert_eq!(month_number("ma"), None);
        assert_eq!(month_number("mar"), Some(3));
        assert_eq!(month_number("lundi"), None);
    }

    #[test]
    fn abbreviation_flag() {
        assert!(is_abbreviated("déc."));
        assert!(!is_abbreviated("décembre"));
        assert!(!is_abbreviated("mai"));
    }

    #[test]
    fn default_lexicon_resolves() {
        for e in default_month_lexicon().entries() {
            assert!(month_number(&e.key).is_some(), "{}", e.key);
        }
    }
}
