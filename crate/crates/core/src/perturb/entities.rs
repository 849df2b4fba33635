//! Named-entity spans, the aligned entity inventory and span splicing.
//!
//! Offsets are Unicode scalar indices into the segment, end exclusive.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{Origin, PerturbError, PerturbedSource};
use crate::adapter::{
    bindings, Adapter, DecodingParams, JsonShape, TaskContext, ENTITY_ALIGN, ENTITY_GENERATE,
    ENTITY_TRANSLATE,
};
use crate::corpus::{CorpusError, LangCode, MultiwayCorpus};
use crate::rng::SplitMix64;

macro_rules! labels {
    ($($variant:ident => $name:literal),* $(,)?) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum EntityLabel {
            $(#[serde(rename = $name)] $variant,)*
        }

        impl EntityLabel {
            pub const ALL: &'static [EntityLabel] = &[$(EntityLabel::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(EntityLabel::$variant => $name,)*
                }
            }
        }

        impl FromStr for EntityLabel {
            type Err = PerturbError;

            fn from_str(s: &str) -> Result<Self, PerturbError> {
                match s {
                    $($name => Ok(EntityLabel::$variant),)*
                    _ => Err(PerturbError::UnknownLabel(s.to_string())),
                }
            }
        }
    };
}

labels! {
    Cardinal => "CARDINAL",
    Date => "DATE",
    Event => "EVENT",
    Fac => "FAC",
    Gpe => "GPE",
    Language => "LANGUAGE",
    Law => "LAW",
    Loc => "LOC",
    Money => "MONEY",
    Norp => "NORP",
    Ordinal => "ORDINAL",
    Org => "ORG",
    Percent => "PERCENT",
    Person => "PERSON",
    Product => "PRODUCT",
    Quantity => "QUANTITY",
    Time => "TIME",
    WorkOfArt => "WORK_OF_ART",
    Misc => "MISC",
}

impl fmt::Display for EntityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: EntityLabel,
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "setting", rename_all = "snake_case")]
pub enum ReplacementSetting {
    Base,
    OneEntity { seed: u64 },
    AllEntities,
}

impl fmt::Display for ReplacementSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplacementSetting::Base => f.write_str("base"),
            ReplacementSetting::OneEntity { seed } => write!(f, "one:{seed}"),
            ReplacementSetting::AllEntities => f.write_str("all"),
        }
    }
}

fn byte_offset(s: &str, char_idx: usize) -> usize {
    s.char_indices().nth(char_idx).map_or(s.len(), |(b, _)| b)
}

fn char_slice(s: &str, start: usize, end: usize) -> &str {
    &s[byte_offset(s, start)..byte_offset(s, end)]
}

/// Splices replacement surfaces into `segment`. `key` (normally the
/// sentence id) keys the one-entity choice together with the seed, so the
/// same span index is chosen in every language of a sentence.
pub fn apply_replacement(
    segment: &str,
    spans: &[EntitySpan],
    new_surfaces: &[String],
    setting: ReplacementSetting,
    key: u64,
) -> String {
    assert_eq!(spans.len(), new_surfaces.len(), "one new surface per span");
    if spans.is_empty() {
        return segment.to_string();
    }
    let mut chosen: Vec<usize> = match setting {
        ReplacementSetting::Base => return segment.to_string(),
        ReplacementSetting::AllEntities => (0..spans.len()).collect(),
        ReplacementSetting::OneEntity { seed } => {
            vec![SplitMix64::keyed(seed, key).below(spans.len() as u64) as usize]
        }
    };
    chosen.sort_by_key(|&i| std::cmp::Reverse(spans[i].start));
    let mut out = segment.to_string();
    for i in chosen {
        let (a, b) = (byte_offset(&out, spans[i].start), byte_offset(&out, spans[i].end));
        out.replace_range(a..b, &new_surfaces[i]);
    }
    out
}

#[derive(Deserialize)]
struct NerRecord {
    id: u64,
    spans: Vec<RawSpan>,
}

#[derive(Deserialize)]
struct RawSpan {
    start: usize,
    end: usize,
    label: String,
    text: String,
}

/// Parses NER JSON lines and checks labels, ordering and overlap. Spans are
/// returned sorted by start.
pub fn parse_ner(text: &str) -> Result<BTreeMap<u64, Vec<EntitySpan>>, PerturbError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: NerRecord = serde_json::from_str(line).map_err(|e| PerturbError::File {
            path: format!("line {}", n + 1),
            reason: e.to_string(),
        })?;
        let mut spans = Vec::with_capacity(rec.spans.len());
        for s in rec.spans {
            let label: EntityLabel = s.label.parse()?;
            if s.start >= s.end {
                return Err(PerturbError::BadSpanOffsets {
                    id: rec.id,
                    reason: format!("empty or inverted span {}..{}", s.start, s.end),
                });
            }
            spans.push(EntitySpan {
                start: s.start,
                end: s.end,
                label,
                text: s.text,
            });
        }
        spans.sort_by_key(|s| s.start);
        if let Some(w) = spans.windows(2).find(|w| w[1].start < w[0].end) {
            return Err(PerturbError::BadSpanOffsets {
                id: rec.id,
                reason: format!("{:?} overlaps {:?}", w[0].text, w[1].text),
            });
        }
        if out.insert(rec.id, spans).is_some() {
            return Err(PerturbError::BadSpanOffsets {
                id: rec.id,
                reason: "sentence listed twice".into(),
            });
        }
    }
    Ok(out)
}

/// Checks that every span lies inside its segment and matches its slice.
pub fn validate_spans(
    spans: &BTreeMap<u64, Vec<EntitySpan>>,
    corpus: &MultiwayCorpus,
    lang: &LangCode,
) -> Result<(), PerturbError> {
    for (&id, list) in spans {
        let seg = corpus.segment(lang, id)?;
        let len = seg.chars().count();
        for s in list {
            if s.end > len {
                return Err(PerturbError::BadSpanOffsets {
                    id,
                    reason: format!("span {}..{} past segment end {len}", s.start, s.end),
                });
            }
            let slice = char_slice(seg, s.start, s.end);
            if slice != s.text {
                return Err(PerturbError::BadSpanOffsets {
                    id,
                    reason: format!("span {}..{} is {slice:?}, not {:?}", s.start, s.end, s.text),
                });
            }
        }
    }
    Ok(())
}

/// Loads and validates the English NER annotations. Sentences missing from
/// the file have no entities.
pub fn load_ner(
    path: &Path,
    corpus: &MultiwayCorpus,
    english: &LangCode,
) -> Result<BTreeMap<u64, Vec<EntitySpan>>, PerturbError> {
    let text = std::fs::read_to_string(path).map_err(|e| PerturbError::File {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let spans = parse_ner(&text).map_err(|e| match e {
        PerturbError::File { path: line, reason } => PerturbError::File {
            path: format!("{}: {line}", path.display()),
            reason,
        },
        other => other,
    })?;
    validate_spans(&spans, corpus, english)?;
    Ok(spans)
}

/// Compact `[{"label":..,"text":..}]` list used in the entity prompts.
pub fn entity_list_json(spans: &[EntitySpan]) -> String {
    let list: Vec<Value> = spans
        .iter()
        .map(|s| json!({"label": s.label.as_str(), "text": s.text}))
        .collect();
    Value::Array(list).to_string()
}

/// Finds each surface in `target`, in order, without overlapping earlier
/// finds. Repeated surfaces map to successive occurrences. Returns the first
/// surface that cannot be placed as the error.
pub fn locate_spans(
    target: &str,
    labels: &[EntityLabel],
    surfaces: &[String],
) -> Result<Vec<EntitySpan>, String> {
    let to_char = |b: usize| target[..b].chars().count();
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut out = Vec::with_capacity(surfaces.len());
    let mut cursor = 0usize;
    for (label, surface) in labels.iter().zip(surfaces) {
        if surface.is_empty() {
            return Err(surface.clone());
        }
        let free = |b: usize| {
            let e = b + surface.len();
            taken.iter().all(|&(s, t)| e <= s || b >= t)
        };
        let occurrences: Vec<usize> = target.match_indices(surface.as_str()).map(|(b, _)| b).collect();
        let pick = occurrences
            .iter()
            .copied()
            .find(|&b| b >= cursor && free(b))
            .or_else(|| occurrences.iter().copied().find(|&b| free(b)))
            .ok_or_else(|| surface.clone())?;
        let end = pick + surface.len();
        taken.push((pick, end));
        cursor = end;
        out.push(EntitySpan {
            start: to_char(pick),
            end: to_char(end),
            label: *label,
            text: surface.clone(),
        });
    }
    Ok(out)
}

/// Everything needed to perturb one sentence in every language.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InventoryEntry {
    pub spans_eng: Vec<EntitySpan>,
    /// English replacement surface per span.
    pub new_ents: Vec<String>,
    /// Aligned spans per non-English language, index-aligned with `spans_eng`.
    pub spans: BTreeMap<LangCode, Vec<EntitySpan>>,
    /// Translated replacement surface per non-English language.
    pub new_ents_lang: BTreeMap<LangCode, Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntityInventory {
    pub english: LangCode,
    pub languages: Vec<LangCode>,
    pub entries: BTreeMap<u64, InventoryEntry>,
    /// Sentences with entities that were left out, with the reason.
    pub excluded: BTreeMap<u64, String>,
}

impl EntityInventory {
    pub fn sentence_ids(&self) -> Vec<u64> {
        self.entries.keys().copied().collect()
    }

    /// Original spans and replacement surfaces of sentence `id` in `lang`.
    pub fn for_language(&self, id: u64, lang: &LangCode) -> Option<(&[EntitySpan], &[String])> {
        let e = self.entries.get(&id)?;
        if *lang == self.english {
            return Some((&e.spans_eng, &e.new_ents));
        }
        Some((e.spans.get(lang)?, e.new_ents_lang.get(lang)?))
    }

    /// Original entity surfaces keyed by (language, sentence id).
    pub fn surfaces(&self) -> HashMap<(LangCode, u64), Vec<String>> {
        let mut out = HashMap::new();
        for (&id, e) in &self.entries {
            let texts = |s: &[EntitySpan]| s.iter().map(|s| s.text.clone()).collect::<Vec<_>>();
            out.insert((self.english.clone(), id), texts(&e.spans_eng));
            for (lang, spans) in &e.spans {
                out.insert((lang.clone(), id), texts(spans));
            }
        }
        out
    }

    /// `{"<id>": {"spans_eng", "new_ents", "spans_<lang>", "new_ents_<lang>"}}`
    /// with `<lang>` the full language code.
    pub fn to_json(&self) -> Value {
        let mut root = Map::new();
        for (id, e) in &self.entries {
            let mut rec = Map::new();
            rec.insert("spans_eng".into(), json!(e.spans_eng));
            rec.insert("new_ents".into(), json!(e.new_ents));
            for (lang, spans) in &e.spans {
                rec.insert(format!("spans_{lang}"), json!(spans));
            }
            for (lang, ents) in &e.new_ents_lang {
                rec.insert(format!("new_ents_{lang}"), json!(ents));
            }
            root.insert(id.to_string(), Value::Object(rec));
        }
        Value::Object(root)
    }

    pub fn from_json(value: &Value, english: LangCode) -> Result<Self, PerturbError> {
        let bad = |reason: String| PerturbError::File {
            path: "inventory".into(),
            reason,
        };
        let root = value.as_object().ok_or_else(|| bad("top level is not an object".into()))?;
        let mut entries = BTreeMap::new();
        let mut languages = std::collections::BTreeSet::new();
        for (id, rec) in root {
            let id: u64 = id.parse().map_err(|_| bad(format!("bad sentence id {id:?}")))?;
            let rec = rec.as_object().ok_or_else(|| bad(format!("sentence {id} is not an object")))?;
            let field = |k: &str| rec.get(k).ok_or_else(|| bad(format!("sentence {id}: missing {k}")));
            let parse_err = |e: serde_json::Error| bad(format!("sentence {id}: {e}"));
            let mut entry = InventoryEntry {
                spans_eng: serde_json::from_value(field("spans_eng")?.clone()).map_err(parse_err)?,
                new_ents: serde_json::from_value(field("new_ents")?.clone()).map_err(parse_err)?,
                spans: BTreeMap::new(),
                new_ents_lang: BTreeMap::new(),
            };
            for (k, v) in rec {
                if let Some(code) = k.strip_prefix("spans_").filter(|c| *c != "eng") {
                    let lang: LangCode = code.parse().map_err(|e: CorpusError| bad(e.to_string()))?;
                    let spans: Vec<EntitySpan> = serde_json::from_value(v.clone()).map_err(parse_err)?;
                    languages.insert(lang.clone());
                    entry.spans.insert(lang, spans);
                } else if let Some(code) = k.strip_prefix("new_ents_") {
                    let lang: LangCode = code.parse().map_err(|e: CorpusError| bad(e.to_string()))?;
                    let ents: Vec<String> = serde_json::from_value(v.clone()).map_err(parse_err)?;
                    entry.new_ents_lang.insert(lang, ents);
                }
            }
            entries.insert(id, entry);
        }
        Ok(Self {
            english,
            languages: languages.into_iter().collect(),
            entries,
            excluded: BTreeMap::new(),
        })
    }
}

fn violation(id: u64, reason: impl Into<String>) -> PerturbError {
    PerturbError::SchemaViolation {
        id,
        reason: reason.into(),
    }
}

fn str_field(v: &Value, k: &str) -> String {
    v.get(k).and_then(Value::as_str).unwrap_or_default().to_string()
}

/// Runs generation, alignment and entity translation for one sentence.
pub fn build_entry(
    corpus: &MultiwayCorpus,
    english: &LangCode,
    id: u64,
    spans_eng: &[EntitySpan],
    langs: &[LangCode],
    helper: &Adapter,
    params: &DecodingParams,
) -> Result<InventoryEntry, PerturbError> {
    let eng = corpus.segment(english, id)?;
    let labels: Vec<String> = spans_eng.iter().map(|s| s.label.to_string()).collect();
    let label_ids: Vec<EntityLabel> = spans_eng.iter().map(|s| s.label).collect();
    let pairs: Vec<(String, String)> = spans_eng
        .iter()
        .map(|s| (s.label.to_string(), s.text.clone()))
        .collect();
    let ent_list = entity_list_json(spans_eng);
    let wrap = |e| match e {
        crate::adapter::AdapterError::SchemaViolation(r) => violation(id, r),
        other => PerturbError::Adapter(other),
    };

    let (generated, _) = helper
        .json_task(
            ENTITY_GENERATE,
            &bindings([("ent_list", &ent_list)]),
            &TaskContext::EntityGenerate { entities: pairs.clone() },
            params,
            &JsonShape::GeneratedEntities { labels: labels.clone() },
        )
        .map_err(wrap)?;
    let mut new_ents = Vec::with_capacity(spans_eng.len());
    for (item, span) in generated.as_array().into_iter().flatten().zip(spans_eng) {
        let new_ent = str_field(item, "new_ent").trim().to_string();
        if new_ent.is_empty() || new_ent.to_lowercase() == span.text.to_lowercase() {
            return Err(violation(id, format!("new entity {new_ent:?} does not differ from {:?}", span.text)));
        }
        new_ents.push(new_ent);
    }
    let replaced_eng = apply_replacement(eng, spans_eng, &new_ents, ReplacementSetting::AllEntities, id);

    let mut entry = InventoryEntry {
        spans_eng: spans_eng.to_vec(),
        new_ents: new_ents.clone(),
        spans: BTreeMap::new(),
        new_ents_lang: BTreeMap::new(),
    };
    for lang in langs.iter().filter(|l| *l != english) {
        let lang = corpus.language(lang)?;
        let target = corpus.segment(lang, id)?;
        let code = lang.iso3();
        let (aligned, _) = helper
            .json_task(
                ENTITY_ALIGN,
                &bindings([
                    ("tgt_name", lang.display_name()),
                    ("tgt_lang_code", code),
                    ("src", eng),
                    ("ent_eng", &ent_list),
                    ("ref", target),
                ]),
                &TaskContext::EntityAlign {
                    tgt_lang: lang.clone(),
                    entities: pairs.clone(),
                    target_sentence: target.to_string(),
                },
                params,
                &JsonShape::AlignedEntities {
                    key: format!("entities_{code}"),
                    labels: labels.clone(),
                },
            )
            .map_err(wrap)?;
        let surfaces: Vec<String> = aligned
            .as_array()
            .into_iter()
            .flatten()
            .map(|v| str_field(v, "text"))
            .collect();
        let spans = locate_spans(target, &label_ids, &surfaces).map_err(|surface| PerturbError::AlignmentNotFound {
            id,
            lang: lang.to_string(),
            surface,
        })?;

        let mut translated = Vec::with_capacity(new_ents.len());
        for new_entity in &new_ents {
            let rec = helper.call(
                ENTITY_TRANSLATE,
                &bindings([
                    ("tgt_name", lang.display_name()),
                    ("source", eng),
                    ("replaced_source", &replaced_eng),
                    ("reference", target),
                    ("new_entity", new_entity),
                ]),
                &TaskContext::EntityTranslate {
                    tgt_lang: lang.clone(),
                    new_entity: new_entity.clone(),
                    reference: target.to_string(),
                },
                params,
                0,
            )?;
            if rec.extracted.is_empty() {
                return Err(violation(id, format!("empty {lang} translation of {new_entity:?}")));
            }
            translated.push(rec.extracted);
        }
        entry.spans.insert(lang.clone(), spans);
        entry.new_ents_lang.insert(lang.clone(), translated);
    }
    Ok(entry)
}

/// Builds the inventory for every sentence with at least one entity.
/// Sentences whose generation, alignment or translation fails are excluded
/// and logged rather than partially perturbed.
pub fn build_inventory(
    corpus: &MultiwayCorpus,
    english: &LangCode,
    spans: &BTreeMap<u64, Vec<EntitySpan>>,
    langs: &[LangCode],
    helper: &Adapter,
    params: &DecodingParams,
) -> Result<EntityInventory, PerturbError> {
    let english = corpus.language(english)?.clone();
    let mut languages = Vec::new();
    for l in langs {
        languages.push(corpus.language(l)?.clone());
    }
    let todo: Vec<(u64, &Vec<EntitySpan>)> = spans
        .iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(&id, s)| (id, s))
        .collect();
    let results = helper.map_parallel(&todo, |(id, s)| build_entry(corpus, &english, *id, s, &languages, helper, params));
    let mut inv = EntityInventory {
        english,
        languages,
        entries: BTreeMap::new(),
        excluded: BTreeMap::new(),
    };
    for ((id, _), r) in todo.into_iter().zip(results) {
        match r {
            Ok(entry) => {
                inv.entries.insert(id, entry);
            }
            Err(e) => {
                log::warn!("excluding sentence {id} from the entity probe: {e}");
                inv.excluded.insert(id, e.to_string());
            }
        }
    }
    Ok(inv)
}

/// Entity-replaced sources of `lang` over the inventory's sentences.
pub fn replace_sources(
    corpus: &MultiwayCorpus,
    inventory: &EntityInventory,
    lang: &LangCode,
    setting: ReplacementSetting,
) -> Result<PerturbedSource, PerturbError> {
    let lang = corpus.language(lang)?.clone();
    let mut out = PerturbedSource {
        base_lang: lang.clone(),
        origin: Origin::EntityReplaced { setting },
        ids: Vec::new(),
        segments: Vec::new(),
        provenance: Vec::new(),
        errors: Vec::new(),
    };
    for &id in inventory.entries.keys() {
        let seg = corpus.segment(&lang, id)?;
        out.ids.push(id);
        out.provenance.push(None);
        match inventory.for_language(id, &lang) {
            Some((spans, new)) => {
                out.segments.push(Some(apply_replacement(seg, spans, new, setting, id)));
                out.errors.push(None);
            }
            None => {
                out.segments.push(None);
                out.errors.push(Some(format!("no {lang} entities for sentence {id}")));
            }
        }
    }
    Ok(out)
}
