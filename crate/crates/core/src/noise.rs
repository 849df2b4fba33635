//! Seeded token-level perturbations over whitespace tokens.

use crate::rng::{fnv1a, SplitMix64};

/// Drops each whitespace token with probability `rate`; at least one token
/// is kept. The generator is keyed by `seed` and the text itself.
pub fn token_dropout(text: &str, rate: f64, seed: u64) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return String::new();
    }
    let mut rng = SplitMix64::keyed(seed, fnv1a(text.as_bytes()));
    let kept: Vec<&str> = tokens
        .iter()
        .copied()
        .filter(|_| rng.next_f64() >= rate)
        .collect();
    if kept.is_empty() {
        tokens[0].to_string()
    } else {
        kept.join(" ")
    }
}

/// Fisher-Yates shuffle of whitespace tokens keyed by `seed` and `key`.
pub fn shuffle_tokens(text: &str, seed: u64, key: u64) -> String {
    let mut tokens: Vec<&str> = text.split_whitespace().collect();
    SplitMix64::keyed(seed, key).shuffle(&mut tokens);
    tokens.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_is_deterministic_and_subsequence() {
        let text = "one two three four five six seven eight nine ten";
        let a = token_dropout(text, 0.3, 9);
        assert_eq!(a, token_dropout(text, 0.3, 9));
        let orig: Vec<&str> = text.split(' ').collect();
        let mut it = orig.iter();
        for tok in a.split(' ') {
            assert!(it.any(|o| o == &tok), "{a}");
        }
        assert_eq!(token_dropout(text, 0.0, 1), text);
        assert_eq!(token_dropout(text, 1.0, 1), "one");
        assert_eq!(token_dropout("", 0.5, 1), "");
    }

    #[test]
    fn shuffle_keeps_multiset() {
        let text = "a b c d e f g";
        let s = shuffle_tokens(text, 3, 11);
        let mut x: Vec<&str> = s.split(' ').collect();
        x.sort();
        assert_eq!(x.join(" "), text);
        assert_eq!(s, shuffle_tokens(text, 3, 11));
    }
}
