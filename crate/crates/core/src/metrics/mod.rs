//! Surface-overlap scoring conformant with sacrebleu's BLEU, plus the
//! semantic scorer contract.

mod bleu;
mod semantic;
mod tokenize;

use thiserror::Error;

pub use bleu::{
    brevity_penalty, corpus_bleu, corpus_bleu_with, corpus_stats, score_from_stats, segment_stats,
    sentence_bleu, BleuScore, BleuStats, Smoothing, MAX_ORDER,
};
pub use semantic::{
    overlap_similarity, semantic_score_batch, ConstantScorer, HttpScorer, OverlapScorer,
    SemanticBatch, SemanticScore, SemanticScorer,
};
pub use tokenize::{is_cjk_char, tokenize_13a, tokenize_cjk, TokenizerId};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("no segments to score")]
    EmptyInput,
    #[error("semantic scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("malformed semantic scorer reply: {0}")]
    MalformedScorerReply(String),
}
