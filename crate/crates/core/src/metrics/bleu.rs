use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tokenize::TokenizerId;
use super::MetricsError;

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    /// NIST geometric sequence smoothing (the reference scorer's default).
    #[default]
    Exp,
    None,
}

/// Sufficient statistics of corpus BLEU.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub hyp_len: u64,
    pub ref_len: u64,
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
}

impl BleuStats {
    pub fn add(&mut self, other: &BleuStats) {
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub tokenizer: TokenizerId,
    /// Every hypothesis was empty; the score is 0 and the brevity penalty 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub all_empty_hypotheses: bool,
}

fn ngram_counts(tokens: &[String]) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    for n in 1..=MAX_ORDER {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram statistics of one tokenized segment pair.
pub fn segment_stats(hyp: &[String], reference: &[String]) -> BleuStats {
    let ref_counts = ngram_counts(reference);
    let mut stats = BleuStats {
        hyp_len: hyp.len() as u64,
        ref_len: reference.len() as u64,
        ..Default::default()
    };
    for (gram, count) in ngram_counts(hyp) {
        let n = gram.len() - 1;
        stats.totals[n] += count;
        if let Some(&r) = ref_counts.get(gram) {
            stats.matches[n] += count.min(r);
        }
    }
    stats
}

pub fn brevity_penalty(hyp_len: u64, ref_len: u64) -> f64 {
    if hyp_len >= ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

fn ln_or_floor(p: f64) -> f64 {
    if p == 0.0 {
        -9_999_999_999.0
    } else {
        p.ln()
    }
}

/// Final score from aggregated statistics.
pub fn score_from_stats(stats: &BleuStats, smoothing: Smoothing, tokenizer: TokenizerId) -> BleuScore {
    let bp = brevity_penalty(stats.hyp_len, stats.ref_len);
    let mut precisions = [0.0; MAX_ORDER];
    let mut score = 0.0;
    if stats.matches.iter().any(|&m| m > 0) {
        let mut smooth = 1.0;
        #[allow(clippy::needless_range_loop)]
        for n in 0..MAX_ORDER {
            if stats.totals[n] == 0 {
                break;
            }
            precisions[n] = if stats.matches[n] == 0 {
                match smoothing {
                    Smoothing::Exp => {
                        smooth *= 2.0;
                        100.0 / (smooth * stats.totals[n] as f64)
                    }
                    Smoothing::None => 0.0,
                }
            } else {
                100.0 * stats.matches[n] as f64 / stats.totals[n] as f64
            };
        }
        let log_sum: f64 = precisions.iter().map(|&p| ln_or_floor(p)).sum();
        score = bp * (log_sum / MAX_ORDER as f64).exp();
    }
    BleuScore {
        score,
        precisions,
        brevity_penalty: bp,
        hyp_len: stats.hyp_len,
        ref_len: stats.ref_len,
        matches: stats.matches,
        totals: stats.totals,
        tokenizer,
        all_empty_hypotheses: stats.hyp_len == 0,
    }
}

pub fn corpus_stats<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    tok: TokenizerId,
) -> Result<BleuStats, MetricsError> {
    if hyps.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        let stats = segment_stats(&tok.tokenize(h.as_ref()), &tok.tokenize(r.as_ref()));
        total.add(&stats);
    }
    Ok(total)
}

/// Corpus BLEU on the 0-100 scale with exponential smoothing.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    tok: TokenizerId,
) -> Result<BleuScore, MetricsError> {
    corpus_bleu_with(hyps, refs, tok, Smoothing::Exp)
}

pub fn corpus_bleu_with<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    tok: TokenizerId,
    smoothing: Smoothing,
) -> Result<BleuScore, MetricsError> {
    let stats = corpus_stats(hyps, refs, tok)?;
    Ok(score_from_stats(&stats, smoothing, tok))
}

pub fn sentence_bleu(hyp: &str, reference: &str, tok: TokenizerId) -> BleuScore {
    let stats = segment_stats(&tok.tokenize(hyp), &tok.tokenize(reference));
    score_from_stats(&stats, Smoothing::Exp, tok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const T: TokenizerId = TokenizerId::Intl13a;

    #[test]
    fn identity_is_100() {
        let corpus = ["The cat sat on the mat.", "It was a sunny day in May."];
        let s = corpus_bleu(&corpus, &corpus, T).unwrap();
        assert_abs_diff_eq!(s.score, 100.0, epsilon = 1e-9);
        assert_eq!(s.brevity_penalty, 1.0);
    }

    #[test]
    fn zero_overlap_scores_zero() {
        let s = corpus_bleu(&["alpha beta gamma delta"], &["one two three four"], T).unwrap();
        assert_eq!(s.score, 0.0);
        assert!(s.score < 1.0);
    }

    #[test]
    fn smoothing_keeps_partial_matches_positive() {
        let s = sentence_bleu("the cat ate a fish", "a dog saw the cat", T);
        assert!(s.score > 0.0 && s.score < 100.0);
        assert_eq!(s.matches[3], 0);
        assert_abs_diff_eq!(s.precisions[3], 100.0 / (4.0 * s.totals[3] as f64), epsilon = 1e-12);
    }

    #[test]
    fn unigram_only_overlap_below_four_gram_overlap() {
        let reference = "we walked along the river to the old mill";
        let unigram_only = sentence_bleu("mill old the to river the along walked we", reference, T);
        let four_gram = sentence_bleu("we walked along the river to a new mill", reference, T);
        assert!(unigram_only.score > 0.0);
        assert!(unigram_only.score < four_gram.score);
    }

    #[test]
    fn empty_hypothesis() {
        let s = sentence_bleu("", "a reference sentence", T);
        assert_eq!(s.score, 0.0);
        assert!(s.all_empty_hypotheses);
        assert_eq!(s.brevity_penalty, 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            corpus_bleu(&["a"], &["a", "b"], T),
            Err(MetricsError::LengthMismatch { hyps: 1, refs: 2 })
        ));
    }

    #[test]
    fn score_matches_formula() {
        let s = corpus_bleu(
            &["the quick brown fox jumped", "over a lazy dog today"],
            &["the quick brown fox jumps", "over the lazy dog"],
            T,
        )
        .unwrap();
        let geo: f64 = s.precisions.iter().map(|p| (p / 100.0).ln()).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(s.score, s.brevity_penalty * geo.exp() * 100.0, epsilon = 1e-9);
    }
}
