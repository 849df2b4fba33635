//! Evaluation drivers and contamination diagnostics.

mod matrix;
mod recall;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matrix::{
    asymmetry, classify, control_gap, control_gap_values, eval_control, eval_matrix, score_items,
    AsymmetryReport, ControlGap, DirectionScore, Evidence, LanguageAsymmetry, MatrixMeta,
    ScoreMatrix, Verdict, VerdictClass, MATRIX_SCHEMA_VERSION,
};
pub use recall::{
    entity_probe, memorization_profile, recall_probe, EntityProbeReport, EntityProbeRow,
    MemorizationProfile, RecallResult, SkippedDirection,
};

use crate::adapter::AdapterError;
use crate::corpus::{CorpusError, LangCode};
use crate::metrics::{MetricsError, TokenizerId};
use crate::perturb::PerturbError;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error("direction mismatch: {0}")]
    DirectionMismatch(String),
    #[error("asymmetry needs a complete matrix over at least 3 languages: {0}")]
    IncompleteMatrix(String),
    #[error("no sentence is eligible for the probe")]
    EmptySubset,
    #[error("every item failed")]
    NothingScored,
}

/// Decision thresholds. These are audit-tool defaults, always printed with
/// the results they produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// BLEU at or above which a cell is suspiciously high.
    pub contam_bleu: f64,
    /// Semantic score at or above which a translation is good.
    pub sem: f64,
    /// Lower BLEU bound of the clean-but-strong band.
    pub good_lo: f64,
    /// BLEU below which a cell is low.
    pub low: f64,
    /// Semantic score below which a translation is poor.
    pub sem_low: f64,
    /// Minimum benchmark-minus-control BLEU gap that corroborates
    /// contamination.
    pub gap: f64,
    /// Source similarity BLEU below which a perturbed source is divergent.
    pub sim_low: f64,
    /// Output BLEU at or above which recall is anomalous.
    pub recall_high: f64,
    /// A target column is clean when its maximum BLEU is below this.
    pub clean_column_max: f64,
    /// Sentence BLEU at or above which a sentence counts as memorized.
    pub memorized_sentence_bleu: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            contam_bleu: 60.0,
            sem: 0.8,
            good_lo: 15.0,
            low: 15.0,
            sem_low: 0.65,
            gap: 30.0,
            sim_low: 20.0,
            recall_high: 40.0,
            clean_column_max: 5.0,
            memorized_sentence_bleu: 90.0,
        }
    }
}

/// Tokenizer per target language: Han-script languages default to the CJK
/// tokenizer, everything else to 13a.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerMap {
    pub overrides: BTreeMap<LangCode, TokenizerId>,
}

impl TokenizerMap {
    pub fn for_lang(&self, lang: &LangCode) -> TokenizerId {
        if let Some(t) = self.overrides.get(lang) {
            return *t;
        }
        if lang.is_han() {
            TokenizerId::Cjk13a
        } else {
            TokenizerId::Intl13a
        }
    }
}

/// Adapter calls a run will issue on a cold cache.
pub mod plan {
    /// `n·(n−1)` directions times the sentence count.
    pub fn eval_matrix(n_langs: usize, n_sentences: usize) -> u64 {
        (n_langs * n_langs.saturating_sub(1) * n_sentences) as u64
    }

    /// One helper call per base language and sentence, then one audited-model
    /// call per perturbed source, target and sentence.
    pub fn recall(n_bases: usize, n_targets_per_base: usize, n_sentences: usize) -> u64 {
        (n_bases * n_sentences + n_bases * n_targets_per_base * n_sentences) as u64
    }

    /// Per sentence with k entities: one generation call, and per
    /// non-English language one alignment call and k translation calls.
    pub fn inventory(entity_counts: &[usize], n_other_langs: usize) -> u64 {
        entity_counts
            .iter()
            .filter(|&&k| k > 0)
            .map(|&k| 1 + n_other_langs * (1 + k))
            .sum::<usize>() as u64
    }

    /// Three settings per direction and sentence.
    pub fn entity_probe(n_directions: usize, n_sentences: usize) -> u64 {
        (3 * n_directions * n_sentences) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_defaults() {
        let mut m = TokenizerMap::default();
        assert_eq!(m.for_lang(&"zho_Hans".parse().unwrap()), TokenizerId::Cjk13a);
        assert_eq!(m.for_lang(&"tam_Taml".parse().unwrap()), TokenizerId::Intl13a);
        m.overrides.insert("tam_Taml".parse().unwrap(), TokenizerId::None);
        assert_eq!(m.for_lang(&"tam_Taml".parse().unwrap()), TokenizerId::None);
    }

    #[test]
    fn planned_calls() {
        assert_eq!(plan::eval_matrix(15, 997), 210 * 997);
        assert_eq!(plan::inventory(&[0, 2, 1], 3), (1 + 3 * 3) + (1 + 3 * 2));
        assert_eq!(plan::entity_probe(4, 10), 120);
    }
}
