//! Word tokens and the case-normalized view used by the name rules.

/// A word token: a maximal run of alphanumerics, with inner hyphens joining
/// runs (`Jean-Pierre`, `Saint-Luc`). Offsets are code points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub start: usize,
    pub end: usize,
    /// Lowercased token text.
    pub lower: String,
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    tokenize_chars(&chars)
}

pub(crate) fn tokenize_chars(chars: &[char]) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_alphanumeric() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() {
            if chars[i].is_alphanumeric() {
                i += 1;
            } else if chars[i] == '-' && i + 1 < chars.len() && chars[i + 1].is_alphanumeric() && i > start {
                i += 1;
            } else {
                break;
            }
        }
        let lower = chars[start..i].iter().flat_map(|c| c.to_lowercase()).collect();
        tokens.push(Token { start, end: i, lower });
    }
    tokens
}

fn lower_1to1(c: char) -> char {
    let mut it = c.to_lowercase();
    match (it.next(), it.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

/// Rewrites lines that contain cased letters but no lowercase letter so that
/// each word keeps only its first letter uppercase. Only one-to-one case
/// mappings are applied, so code-point offsets are unchanged.
pub fn case_view(chars: &[char]) -> Vec<char> {
    let mut out = chars.to_vec();
    let mut line_start = 0;
    for i in 0..=chars.len() {
        if i == chars.len() || chars[i] == '\n' {
            let line = &chars[line_start..i];
            let has_upper = line.iter().any(|c| c.is_uppercase());
            let has_lower = line.iter().any(|c| c.is_lowercase());
            if has_upper && !has_lower {
                let mut word_start = true;
                for (k, &c) in line.iter().enumerate() {
                    if c.is_alphanumeric() {
                        if !word_start {
                            out[line_start + k] = lower_1to1(c);
                        }
                        word_start = false;
                    } else {
                        // D'HONDT -> D'Hondt, JEAN-PIERRE -> Jean-Pierre
                        word_start = true;
                    }
                }
            }
            line_start = i + 1;
        }
    }
    out
}
