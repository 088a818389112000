//! Shifting dates while keeping their written form.

use crate::detect::{expand_year, months};
use crate::error::Result;
use crate::model::{shift_date, CalendarDate};

#[derive(Debug, Clone, PartialEq)]
enum Form {
    Numeric {
        sep: char,
        pad_day: bool,
        pad_month: bool,
        two_digit_year: bool,
    },
    Textual {
        ordinal: bool,
        gap1: String,
        gap2: String,
        abbreviated: bool,
        capitalized: bool,
        uppercase: bool,
    },
}

/// A date as written in a report.
#[derive(Debug, Clone, PartialEq)]
pub struct WrittenDate {
    pub date: CalendarDate,
    form: Form,
}

impl WrittenDate {
    /// Parses `dd/mm/yyyy`-style numeric dates (one separator among `/ . -`,
    /// two- or four-digit year) and `d [er] <mois> yyyy` textual dates.
    pub fn parse(surface: &str) -> Option<Self> {
        Self::parse_numeric(surface).or_else(|| Self::parse_textual(surface))
    }

    fn parse_numeric(s: &str) -> Option<Self> {
        let sep = s.chars().find(|c| !c.is_ascii_digit())?;
        if !matches!(sep, '/' | '.' | '-') {
            return None;
        }
        let parts: Vec<&str> = s.split(sep).collect();
        let [d, m, y] = parts.as_slice() else { return None };
        let digits = |p: &str, lens: &[usize]| lens.contains(&p.len()) && p.chars().all(|c| c.is_ascii_digit());
        if !digits(d, &[1, 2]) || !digits(m, &[1, 2]) || !digits(y, &[2, 4]) {
            return None;
        }
        let date = CalendarDate::new(expand_year(y), m.parse().ok()?, d.parse().ok()?).ok()?;
        Some(WrittenDate {
            date,
            form: Form::Numeric {
                sep,
                pad_day: d.len() == 2,
                pad_month: m.len() == 2,
                two_digit_year: y.len() == 2,
            },
        })
    }

    fn parse_textual(s: &str) -> Option<Self> {
        let day_len = s.chars().take_while(|c| c.is_ascii_digit()).count();
        if !(1..=2).contains(&day_len) {
            return None;
        }
        let (day, rest) = s.split_at(day_len);
        let (ordinal, rest) = match rest.strip_prefix("er") {
            Some(r) => (true, r),
            None => (false, rest),
        };
        let gap1_len = rest.len() - rest.trim_start().len();
        let (gap1, rest) = rest.split_at(gap1_len);
        let word_end = rest.find(char::is_whitespace)?;
        let (word, rest) = rest.split_at(word_end);
        let gap2_len = rest.len() - rest.trim_start().len();
        let (gap2, year) = rest.split_at(gap2_len);
        if gap1.is_empty() || gap2.is_empty() || year.len() != 4 || !year.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let month = months::month_number(word)?;
        let date = CalendarDate::new(year.parse().ok()?, month, day.parse().ok()?).ok()?;
        let letters: Vec<char> = word.chars().filter(|c| c.is_alphabetic()).collect();
        Some(WrittenDate {
            date,
            form: Form::Textual {
                ordinal,
                gap1: gap1.to_owned(),
                gap2: gap2.to_owned(),
                abbreviated: months::is_abbreviated(word),
                capitalized: letters.first().is_some_and(|c| c.is_uppercase()),
                uppercase: letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()),
            },
        })
    }

    /// The same written form moved `offset_days` days.
    pub fn shifted(&self, offset_days: i64) -> Result<Self> {
        Ok(WrittenDate {
            date: shift_date(self.date, offset_days)?,
            form: self.form.clone(),
        })
    }

    pub fn render(&self) -> String {
        let d = self.date;
        match &self.form {
            Form::Numeric {
                sep,
                pad_day,
                pad_month,
                two_digit_year,
            } => {
                let day = if *pad_day { format!("{:02}", d.day()) } else { d.day().to_string() };
                let month = if *pad_month { format!("{:02}", d.month()) } else { d.month().to_string() };
                let year = if *two_digit_year {
                    format!("{:02}", d.year().rem_euclid(100))
                } else {
                    d.year().to_string()
                };
                format!("{day}{sep}{month}{sep}{year}")
            }
            Form::Textual {
                ordinal,
                gap1,
                gap2,
                abbreviated,
                capitalized,
                uppercase,
            } => {
                let (full, abbrev) = months::MONTHS[d.month() as usize - 1];
                let mut word = if *abbreviated { abbrev.to_owned() } else { full.to_owned() };
                if *uppercase {
                    word = word.to_uppercase();
                } else if *capitalized {
                    let mut cs = word.chars();
                    word = cs.next().map(|c| c.to_uppercase().chain(cs).collect()).unwrap_or_default();
                }
                let suffix = if *ordinal && d.day() == 1 { "er" } else { "" };
                format!("{}{suffix}{gap1}{word}{gap2}{}", d.day(), d.year())
            }
        }
    }
}
