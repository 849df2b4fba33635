use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ProbeError, Thresholds, TokenizerMap};
use crate::adapter::{Adapter, DecodingParams, TranslateItem};
use crate::corpus::{Direction, LangCode, MultiwayCorpus};
use crate::metrics::{corpus_bleu, sentence_bleu, TokenizerId};
use crate::perturb::{replace_sources, source_similarity, EntityInventory, PerturbedSource, ReplacementSetting};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallResult {
    /// `xxx_zzz` or `xxx_pp`.
    pub source: String,
    pub direction: Direction,
    pub output_bleu: f64,
    pub similarity_bleu: f64,
    pub recall_flag: bool,
    pub n_items: usize,
    pub failures: usize,
}

/// Translates a perturbed source into `target` and compares output quality
/// with how far the source drifted from the original.
pub fn recall_probe(
    perturbed: &PerturbedSource,
    target: &LangCode,
    corpus: &MultiwayCorpus,
    adapter: &Adapter,
    params: &DecodingParams,
    tokenizers: &TokenizerMap,
    thresholds: &Thresholds,
) -> Result<RecallResult, ProbeError> {
    let target = corpus.language(target)?.clone();
    let direction = Direction::new(perturbed.base_lang.clone(), target.clone());
    let items: Vec<TranslateItem> = perturbed
        .succeeded()
        .map(|(id, seg)| TranslateItem {
            id,
            benchmark_id: Some(id),
            source: seg.to_string(),
        })
        .collect();
    if items.is_empty() {
        return Err(ProbeError::NothingScored);
    }
    let batch = adapter.translate_items(&items, &direction, params);
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for (id, hyp) in batch.succeeded() {
        hyps.push(hyp);
        refs.push(corpus.segment(&target, id)?);
    }
    if hyps.is_empty() {
        return Err(ProbeError::NothingScored);
    }
    let output_bleu = corpus_bleu(&hyps, &refs, tokenizers.for_lang(&target))?.score;
    let similarity_bleu = source_similarity(perturbed, corpus, tokenizers.for_lang(&perturbed.base_lang))?.score;
    Ok(RecallResult {
        source: perturbed.name(),
        direction,
        output_bleu,
        similarity_bleu,
        recall_flag: similarity_bleu < thresholds.sim_low && output_bleu >= thresholds.recall_high,
        n_items: perturbed.len(),
        failures: perturbed.failures() + batch.failed(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityProbeRow {
    pub direction: Direction,
    pub n_items: usize,
    pub bleu_base: f64,
    pub bleu_one: f64,
    pub bleu_all: f64,
    pub drop_one: f64,
    pub drop_all: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedDirection {
    pub direction: Direction,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityProbeReport {
    pub seed: u64,
    pub sentence_ids: Vec<u64>,
    pub rows: Vec<EntityProbeRow>,
    pub skipped: Vec<SkippedDirection>,
}

/// Base, one-entity and all-entities evaluations on the same sentences for
/// every source in `langs` and target in `targets`.
#[allow(clippy::too_many_arguments)]
pub fn entity_probe(
    corpus: &MultiwayCorpus,
    inventory: &EntityInventory,
    langs: &[LangCode],
    targets: &[LangCode],
    adapter: &Adapter,
    params: &DecodingParams,
    tokenizers: &TokenizerMap,
    seed: u64,
) -> Result<EntityProbeReport, ProbeError> {
    if inventory.entries.is_empty() {
        return Err(ProbeError::EmptySubset);
    }
    let settings = [
        ReplacementSetting::Base,
        ReplacementSetting::OneEntity { seed },
        ReplacementSetting::AllEntities,
    ];
    let mut report = EntityProbeReport {
        seed,
        sentence_ids: inventory.sentence_ids(),
        rows: Vec::new(),
        skipped: Vec::new(),
    };
    for src in langs {
        let src = corpus.language(src)?.clone();
        let mut sources = Vec::new();
        for setting in settings {
            sources.push(replace_sources(corpus, inventory, &src, setting)?);
        }
        let missing = sources[0].failures();
        for tgt in targets {
            let tgt = corpus.language(tgt)?.clone();
            if tgt == src {
                continue;
            }
            let direction = Direction::new(src.clone(), tgt.clone());
            if missing > 0 {
                report.skipped.push(SkippedDirection {
                    direction,
                    reason: format!("inventory incomplete: {missing} sentences lack {src} entities"),
                });
                continue;
            }
            let outputs: Vec<BTreeMap<u64, String>> = sources
                .iter()
                .map(|p| {
                    let items: Vec<TranslateItem> = p
                        .succeeded()
                        .map(|(id, s)| TranslateItem {
                            id,
                            benchmark_id: Some(id),
                            source: s.to_string(),
                        })
                        .collect();
                    adapter
                        .translate_items(&items, &direction, params)
                        .succeeded()
                        .map(|(id, h)| (id, h.to_string()))
                        .collect()
                })
                .collect();
            // Identical subset across the three settings.
            let common: BTreeSet<u64> = outputs[0]
                .keys()
                .filter(|id| outputs[1].contains_key(id) && outputs[2].contains_key(id))
                .copied()
                .collect();
            if common.is_empty() {
                report.skipped.push(SkippedDirection {
                    direction,
                    reason: "every item failed".into(),
                });
                continue;
            }
            let tok = tokenizers.for_lang(&tgt);
            let mut refs = Vec::new();
            for &id in &common {
                refs.push(corpus.segment(&tgt, id)?);
            }
            let mut scores = [0.0; 3];
            for (score, out) in scores.iter_mut().zip(&outputs) {
                let hyps: Vec<&str> = common.iter().map(|id| out[id].as_str()).collect();
                *score = corpus_bleu(&hyps, &refs, tok)?.score;
            }
            report.rows.push(EntityProbeRow {
                direction,
                n_items: common.len(),
                bleu_base: scores[0],
                bleu_one: scores[1],
                bleu_all: scores[2],
                drop_one: scores[0] - scores[1],
                drop_all: scores[0] - scores[2],
            });
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorizationProfile {
    pub n: usize,
    pub threshold: f64,
    pub fraction_memorized: f64,
    /// Counts of sentence BLEU in [0,10), [10,20), ..., [90,100].
    pub histogram: [usize; 10],
}

pub fn memorization_profile<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    tok: TokenizerId,
    threshold: f64,
) -> Result<MemorizationProfile, ProbeError> {
    if hyps.len() != refs.len() {
        return Err(crate::metrics::MetricsError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        }
        .into());
    }
    let mut histogram = [0usize; 10];
    let mut memorized = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        let s = sentence_bleu(h.as_ref(), r.as_ref(), tok).score;
        histogram[((s / 10.0).floor() as usize).min(9)] += 1;
        memorized += usize::from(s >= threshold);
    }
    let n = hyps.len();
    Ok(MemorizationProfile {
        n,
        threshold,
        fraction_memorized: if n == 0 { 0.0 } else { memorized as f64 / n as f64 },
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_fractions() {
        let refs = ["the cat sat on the mat today", "a dog ran in the park", "birds sing at dawn", "rain fell all night long"];
        let p = memorization_profile(&refs, &refs, TokenizerId::Intl13a, 90.0).unwrap();
        assert_eq!(p.fraction_memorized, 1.0);
        assert_eq!(p.histogram[9], 4);
        let other = ["zz yy", "xx ww", "vv uu", "tt ss"];
        let p = memorization_profile(&other, &refs, TokenizerId::Intl13a, 90.0).unwrap();
        assert_eq!(p.fraction_memorized, 0.0);
        let half = [refs[0], refs[1], other[2], other[3]];
        let p = memorization_profile(&half, &refs, TokenizerId::Intl13a, 90.0).unwrap();
        assert_eq!(p.fraction_memorized, 0.5);
    }
}
