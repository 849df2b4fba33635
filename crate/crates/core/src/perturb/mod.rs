//! Perturbed source sets: back-translations through a pivot language,
//! same-language paraphrases and entity-replaced sources.

mod entities;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use entities::{
    apply_replacement, build_entry, build_inventory, entity_list_json, load_ner, locate_spans,
    parse_ner, replace_sources, validate_spans, EntityInventory, EntityLabel, EntitySpan,
    InventoryEntry, ReplacementSetting,
};

use crate::adapter::{bindings, Adapter, AdapterError, BatchOutput, DecodingParams, TaskContext, TranslateItem, PARAPHRASE};
use crate::corpus::{CorpusError, Direction, LangCode, MultiwayCorpus};
use crate::metrics::{corpus_bleu, BleuScore, MetricsError, TokenizerId};

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("pivot {0} is also listed as a base language")]
    PivotIsBase(String),
    #[error("sentence {id}: bad span offsets: {reason}")]
    BadSpanOffsets { id: u64, reason: String },
    #[error("unknown entity label {0:?}")]
    UnknownLabel(String),
    #[error("sentence {id}: {lang} entity {surface:?} does not occur in the target sentence")]
    AlignmentNotFound { id: u64, lang: String, surface: String },
    #[error("sentence {id}: {reason}")]
    SchemaViolation { id: u64, reason: String },
    #[error("{path}: {reason}")]
    File { path: String, reason: String },
    #[error("no perturbed segment succeeded")]
    NothingToScore,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Backtranslated { pivot: LangCode },
    Paraphrased,
    EntityReplaced { setting: ReplacementSetting },
}

/// A perturbed version of one language's sources, aligned to corpus ids.
/// Failed items keep their slot with `None` and an error marker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedSource {
    pub base_lang: LangCode,
    pub origin: Origin,
    pub ids: Vec<u64>,
    pub segments: Vec<Option<String>>,
    /// Cache keys of the calls that produced each segment.
    pub provenance: Vec<Option<String>>,
    pub errors: Vec<Option<String>>,
}

impl PerturbedSource {
    fn from_batch(base_lang: LangCode, origin: Origin, batch: BatchOutput) -> Self {
        Self {
            base_lang,
            origin,
            ids: batch.ids,
            segments: batch.hypotheses,
            provenance: batch.cache_keys,
            errors: batch.errors,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn failures(&self) -> usize {
        self.errors.iter().filter(|e| e.is_some()).count()
    }

    /// `xxx_zzz`, `xxx_pp` or `xxx_ent-<setting>`.
    pub fn name(&self) -> String {
        let base = self.base_lang.iso3();
        match &self.origin {
            Origin::Backtranslated { pivot } => format!("{base}_{}", pivot.iso3()),
            Origin::Paraphrased => format!("{base}_pp"),
            Origin::EntityReplaced { setting } => format!("{base}_ent-{setting}"),
        }
    }

    /// (id, segment) for the items that were produced.
    pub fn succeeded(&self) -> impl Iterator<Item = (u64, &str)> {
        self.ids
            .iter()
            .zip(&self.segments)
            .filter_map(|(id, s)| s.as_deref().map(|s| (*id, s)))
    }
}

/// Translates the pivot-language sources into each base language.
pub fn backtranslate(
    corpus: &MultiwayCorpus,
    pivot: &LangCode,
    base_langs: &[LangCode],
    helper: &Adapter,
    params: &DecodingParams,
) -> Result<BTreeMap<LangCode, PerturbedSource>, PerturbError> {
    let pivot = corpus.language(pivot)?.clone();
    let mut out = BTreeMap::new();
    for base in base_langs {
        if *base == pivot {
            return Err(PerturbError::PivotIsBase(pivot.to_string()));
        }
        let base = corpus.language(base)?.clone();
        let direction = Direction::new(pivot.clone(), base.clone());
        let batch = helper.translate_batch(corpus, &direction, params)?;
        if let Some(e) = batch.partial_error() {
            log::warn!("back-translation {direction}: {e}");
        }
        let origin = Origin::Backtranslated { pivot: pivot.clone() };
        out.insert(base.clone(), PerturbedSource::from_batch(base, origin, batch));
    }
    Ok(out)
}

/// One same-language paraphrase per segment, cut at the first line break.
pub fn paraphrase(
    corpus: &MultiwayCorpus,
    langs: &[LangCode],
    helper: &Adapter,
    params: &DecodingParams,
) -> Result<BTreeMap<LangCode, PerturbedSource>, PerturbError> {
    let mut out = BTreeMap::new();
    for lang in langs {
        let lang = corpus.language(lang)?.clone();
        let items: Vec<TranslateItem> = corpus
            .ids()
            .iter()
            .zip(corpus.segments(&lang)?)
            .map(|(&id, s)| TranslateItem {
                id,
                benchmark_id: Some(id),
                source: s.clone(),
            })
            .collect();
        let results = helper.map_parallel(&items, |item| {
            let b = bindings([("lang_name", lang.display_name()), ("src", &item.source)]);
            let ctx = TaskContext::Paraphrase {
                lang: lang.clone(),
                source: item.source.clone(),
            };
            helper.call(PARAPHRASE, &b, &ctx, params, 0)
        });
        let mut batch = BatchOutput::default();
        for (item, r) in items.iter().zip(results) {
            batch.ids.push(item.id);
            match r {
                Ok(rec) => {
                    batch.hypotheses.push(Some(rec.extracted));
                    batch.cache_keys.push(Some(rec.cache_key));
                    batch.errors.push(None);
                }
                Err(e) => {
                    batch.hypotheses.push(None);
                    batch.cache_keys.push(None);
                    batch.errors.push(Some(e.to_string()));
                }
            }
        }
        out.insert(lang.clone(), PerturbedSource::from_batch(lang, Origin::Paraphrased, batch));
    }
    Ok(out)
}

/// BLEU of the perturbed segments against the original base-language
/// segments, over the items that were produced.
pub fn source_similarity(
    perturbed: &PerturbedSource,
    corpus: &MultiwayCorpus,
    tok: TokenizerId,
) -> Result<BleuScore, PerturbError> {
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for (id, seg) in perturbed.succeeded() {
        hyps.push(seg);
        refs.push(corpus.segment(&perturbed.base_lang, id)?);
    }
    if hyps.is_empty() {
        return Err(PerturbError::NothingToScore);
    }
    Ok(corpus_bleu(&hyps, &refs, tok)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{StubModel, StubSpec};
    use std::sync::Arc;

    fn corpus() -> Arc<MultiwayCorpus> {
        let col = |code: &str, segs: [&str; 2]| {
            (code.parse::<LangCode>().unwrap(), segs.iter().map(|s| s.to_string()).collect())
        };
        let columns = vec![
            col("eng_Latn", ["the cat sat on the mat", "a dog ran far away today"]),
            col("por_Latn", ["o gato sentou no tapete", "um cão correu longe hoje"]),
            col("fra_Latn", ["le chat était sur le tapis", "un chien a couru loin"]),
        ];
        Arc::new(MultiwayCorpus::from_segments(columns, None).unwrap())
    }

    fn helper(spec: StubSpec, c: &Arc<MultiwayCorpus>) -> Adapter {
        Adapter::new(Arc::new(StubModel::new(spec, c.clone())))
    }

    #[test]
    fn echo_backtranslation_copies_pivot() {
        let c = corpus();
        let eng = LangCode::resolve("eng").unwrap();
        let por = LangCode::resolve("por").unwrap();
        let out = backtranslate(&c, &por, std::slice::from_ref(&eng), &helper(StubSpec::echo(), &c), &DecodingParams::default()).unwrap();
        let p = &out[&eng];
        assert_eq!(p.name(), "eng_por");
        assert_eq!(p.segments[0].as_deref(), Some("o gato sentou no tapete"));
        assert_eq!(p.len(), c.len());
        assert!(backtranslate(&c, &por, std::slice::from_ref(&por), &helper(StubSpec::echo(), &c), &DecodingParams::default()).is_err());
        let zul: LangCode = "zul".parse().unwrap();
        assert!(backtranslate(&c, &zul, &[eng], &helper(StubSpec::echo(), &c), &DecodingParams::default()).is_err());
    }

    #[test]
    fn paraphrase_similarity() {
        let c = corpus();
        let eng = LangCode::resolve("eng").unwrap();
        let params = DecodingParams::default();
        let echo = paraphrase(&c, std::slice::from_ref(&eng), &helper(StubSpec::echo(), &c), &params).unwrap();
        let sim = source_similarity(&echo[&eng], &c, TokenizerId::Intl13a).unwrap();
        assert!((sim.score - 100.0).abs() < 1e-9);
        let noisy = paraphrase(&c, std::slice::from_ref(&eng), &helper(StubSpec::noise(5, 0.3), &c), &params).unwrap();
        let sim = source_similarity(&noisy[&eng], &c, TokenizerId::Intl13a).unwrap();
        assert!(sim.score < 100.0);
        assert!(paraphrase(&c, &[], &helper(StubSpec::echo(), &c), &params).unwrap().is_empty());
    }
}
