//! mteval-13a and CJK tokenizers, matching sacrebleu's `13a` and `zh`
//! tokenizers character for character.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenizerId {
    /// mteval-v13a (sacrebleu `13a`).
    #[serde(rename = "intl-13a")]
    Intl13a,
    /// Han characters split, rest as 13a (sacrebleu `zh`).
    #[serde(rename = "cjk-13a")]
    Cjk13a,
    /// Whitespace split only.
    #[serde(rename = "none")]
    None,
}

impl TokenizerId {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenizerId::Intl13a => "intl-13a",
            TokenizerId::Cjk13a => "cjk-13a",
            TokenizerId::None => "none",
        }
    }

    /// Tokenizes a segment the way the BLEU scorer does (trailing whitespace
    /// is stripped first).
    pub fn tokenize(self, text: &str) -> Vec<String> {
        let text = text.trim_end_matches(py_is_space);
        match self {
            TokenizerId::Intl13a => tokenize_13a(text),
            TokenizerId::Cjk13a => tokenize_cjk(text),
            TokenizerId::None => py_split(text),
        }
    }
}

impl fmt::Display for TokenizerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenizerId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "intl-13a" | "13a" => Ok(TokenizerId::Intl13a),
            "cjk-13a" | "zh" => Ok(TokenizerId::Cjk13a),
            "none" => Ok(TokenizerId::None),
            other => Err(format!("unknown tokenizer {other:?} (intl-13a, cjk-13a, none)")),
        }
    }
}

/// Python's `str.isspace`: Unicode whitespace plus the ASCII separators
/// U+001C..U+001F.
fn py_is_space(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

fn py_split(text: &str) -> Vec<String> {
    text.split(py_is_space)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn tokenize_13a(text: &str) -> Vec<String> {
    let mut line = text.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if line.contains('&') {
        line = line
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    regexp_tokenize(&format!(" {line} "))
}

pub fn tokenize_cjk(text: &str) -> Vec<String> {
    let line = text.trim_matches(py_is_space);
    let mut spaced = String::with_capacity(line.len() * 3);
    for c in line.chars() {
        if is_cjk_char(c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    regexp_tokenize(&spaced)
}

/// Code point ranges treated as single-character tokens.
///
/// sacrebleu writes the two supplementary-plane ranges as `' 0'` and
/// `'⾀0'`, which Python reads as two-character strings (`U+2000 '0'`,
/// `U+2F80 '0'`). Comparing a single character against those bounds yields
/// the half-open ranges encoded below, so U+20000 and up are not split.
const CJK_RANGES: &[(u32, u32)] = &[
    (0x3400, 0x4DB5),
    (0x4E00, 0x9FA5),
    (0x9FA6, 0x9FBB),
    (0xF900, 0xFA2D),
    (0xFA30, 0xFA6A),
    (0xFA70, 0xFAD9),
    (0x2001, 0x2A6D),
    (0x2F81, 0x2FA1),
    (0xFF00, 0xFFEF),
    (0x2E80, 0x2EFF),
    (0x3000, 0x303F),
    (0x31C0, 0x31EF),
    (0x2F00, 0x2FDF),
    (0x2FF0, 0x2FFF),
    (0x3100, 0x312F),
    (0x31A0, 0x31BF),
    (0xFE10, 0xFE1F),
    (0xFE30, 0xFE4F),
    (0x2600, 0x26FF),
    (0x2700, 0x27BF),
    (0x3200, 0x32FF),
    (0x3300, 0x33FF),
];

pub fn is_cjk_char(c: char) -> bool {
    let cp = c as u32;
    CJK_RANGES.iter().any(|&(lo, hi)| lo <= cp && cp <= hi)
}

fn is_13a_symbol(c: char) -> bool {
    matches!(c,
        '{'..='~' | '['..='`' | ' '..='&' | '('..='+' | ':'..='@' | '/')
}

/// The shared regex stage of both tokenizers, rule by rule.
fn regexp_tokenize(line: &str) -> Vec<String> {
    // ([\{-\~\[-\` -\&\(-\+\:-\@\/]) -> ' \1 '
    let mut s: Vec<char> = Vec::with_capacity(line.len() * 2);
    for c in line.chars() {
        if is_13a_symbol(c) {
            s.extend([' ', c, ' ']);
        } else {
            s.push(c);
        }
    }
    let is_digit = |c: char| c.is_ascii_digit();
    let is_pc = |c: char| c == '.' || c == ',';

    // ([^0-9])([\.,]) -> '\1 \2 '
    let mut t = Vec::with_capacity(s.len() * 2);
    let mut i = 0;
    while i < s.len() {
        if i + 1 < s.len() && !is_digit(s[i]) && is_pc(s[i + 1]) {
            t.extend([s[i], ' ', s[i + 1], ' ']);
            i += 2;
        } else {
            t.push(s[i]);
            i += 1;
        }
    }

    // ([\.,])([^0-9]) -> ' \1 \2'
    let mut u = Vec::with_capacity(t.len() * 2);
    let mut i = 0;
    while i < t.len() {
        if i + 1 < t.len() && is_pc(t[i]) && !is_digit(t[i + 1]) {
            u.extend([' ', t[i], ' ', t[i + 1]]);
            i += 2;
        } else {
            u.push(t[i]);
            i += 1;
        }
    }

    // ([0-9])(-) -> '\1 \2 '
    let mut v = String::with_capacity(u.len() * 2);
    let mut i = 0;
    while i < u.len() {
        if i + 1 < u.len() && is_digit(u[i]) && u[i + 1] == '-' {
            v.push(u[i]);
            v.push(' ');
            v.push('-');
            v.push(' ');
            i += 2;
        } else {
            v.push(u[i]);
            i += 1;
        }
    }
    py_split(&v)
}
