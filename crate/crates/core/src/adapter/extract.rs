//! Pulling the answer out of a raw model reply.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extracted {
    pub text: String,
    /// The reply had no balanced `{...}` pair; `text` is the whole reply.
    pub unbraced: bool,
}

fn first_balanced(s: &str) -> Option<(usize, usize)> {
    let open = s.find('{')?;
    let mut depth = 0usize;
    for (i, c) in s[open..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((open, open + i));
                }
            }
            _ => {}
        }
    }
    None
}

/// Content of the first balanced top-level `{...}` pair, stripped.
///
/// The chat prompt shows the answer format as `{{...}}`, so a pair whose
/// content is itself exactly one balanced pair is unwrapped again.
pub fn extract_braced(raw: &str) -> Extracted {
    let Some((open, close)) = first_balanced(raw) else {
        return Extracted {
            text: raw.trim().to_string(),
            unbraced: true,
        };
    };
    let mut inner = raw[open + 1..close].trim();
    while let Some((o, c)) = first_balanced(inner) {
        if o == 0 && c == inner.len() - 1 {
            inner = inner[1..c].trim();
        } else {
            break;
        }
    }
    Extracted {
        text: inner.to_string(),
        unbraced: false,
    }
}

/// First line with content, for completion-style replies and paraphrases.
pub fn first_line(raw: &str) -> String {
    raw.trim_start()
        .split('\n')
        .next()
        .unwrap_or("")
        .trim()
        .to_string()
}

/// Parses the first JSON object or array embedded in `raw`.
pub fn first_json_value(raw: &str) -> Option<serde_json::Value> {
    for (i, c) in raw.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<serde_json::Value>();
        if let Some(Ok(v)) = stream.next() {
            return Some(v);
        }
    }
    None
}
