//! Deterministic in-process models for GPU-free verification.
//!
//! * `echo` returns the submitted source.
//! * `noise` returns the source with seeded token dropout.
//! * `memorizer` returns the benchmark reference for memorized targets when
//!   its trigger fires, a token-shuffled reference when it does not, and
//!   echoes the source for every other target.
//!
//! Entity tasks are answered the same way by every kind: alignment looks
//! the English surface up in the target sentence, generation draws a
//! different entity of the same label from a fixed pool, and entity
//! translation returns the new entity unchanged.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::backend::{BackendError, ModelBackend, ModelRequest, TaskContext};
use super::template::CHAT_TRANSLATE;
use crate::corpus::{LangCode, MultiwayCorpus};
use crate::noise::{shuffle_tokens, token_dropout};
use crate::metrics::tokenize_cjk;
use crate::rng::{fnv1a, SplitMix64};

pub const DEFAULT_DROPOUT: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StubKind {
    Memorizer,
    Echo,
    Noise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trigger {
    /// Reference iff the submitted source equals the benchmark source.
    ExactSource,
    /// Reference whenever the request carries a benchmark sentence id.
    IdKeyed,
    /// Reference iff every entity surface of the original source is present.
    EntitySensitive,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Targets {
    All,
    Only(BTreeSet<LangCode>),
}

impl Targets {
    pub fn contains(&self, lang: &LangCode) -> bool {
        match self {
            Targets::All => true,
            Targets::Only(set) => set.contains(lang),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StubSpec {
    pub kind: StubKind,
    pub trigger: Trigger,
    pub memorized_targets: Targets,
    pub noise_seed: u64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_dropout() -> f64 {
    DEFAULT_DROPOUT
}

impl StubSpec {
    pub fn echo() -> Self {
        Self {
            kind: StubKind::Echo,
            trigger: Trigger::ExactSource,
            memorized_targets: Targets::Only(BTreeSet::new()),
            noise_seed: 0,
            dropout: DEFAULT_DROPOUT,
        }
    }

    pub fn noise(seed: u64, dropout: f64) -> Self {
        Self {
            kind: StubKind::Noise,
            noise_seed: seed,
            dropout,
            ..Self::echo()
        }
    }

    pub fn memorizer(trigger: Trigger, targets: Targets, seed: u64) -> Self {
        Self {
            kind: StubKind::Memorizer,
            trigger,
            memorized_targets: targets,
            noise_seed: seed,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

/// `echo` | `noise[:seed[:rate]]` | `memorizer:<exact|id|entity>:<all|l1,l2>[:seed]`
impl FromStr for StubSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: Option<&&str>, what: &str| -> Result<Option<u64>, String> {
            p.map(|v| v.parse().map_err(|_| format!("bad {what} {v:?} in stub spec {s:?}")))
                .transpose()
        };
        match parts[0] {
            "echo" if parts.len() == 1 => Ok(StubSpec::echo()),
            "noise" if parts.len() <= 3 => {
                let seed = num(parts.get(1), "seed")?.unwrap_or(0);
                let rate = match parts.get(2) {
                    Some(r) => r
                        .parse::<f64>()
                        .ok()
                        .filter(|r| (0.0..=1.0).contains(r))
                        .ok_or_else(|| format!("bad dropout rate {r:?}"))?,
                    None => DEFAULT_DROPOUT,
                };
                Ok(StubSpec::noise(seed, rate))
            }
            "memorizer" if (3..=4).contains(&parts.len()) => {
                let trigger = match parts[1] {
                    "exact" | "exact-source" => Trigger::ExactSource,
                    "id" | "id-keyed" => Trigger::IdKeyed,
                    "entity" | "entity-sensitive" => Trigger::EntitySensitive,
                    other => return Err(format!("unknown trigger {other:?} (exact, id, entity)")),
                };
                let targets = if parts[2] == "all" {
                    Targets::All
                } else {
                    let mut set = BTreeSet::new();
                    for code in parts[2].split(',').filter(|c| !c.is_empty()) {
                        set.insert(LangCode::resolve(code).map_err(|e| e.to_string())?);
                    }
                    Targets::Only(set)
                };
                let seed = num(parts.get(3), "seed")?.unwrap_or(0);
                Ok(StubSpec::memorizer(trigger, targets, seed))
            }
            _ => Err(format!(
                "bad stub spec {s:?}: expected echo, noise[:seed[:rate]] or memorizer:<exact|id|entity>:<all|langs>[:seed]"
            )),
        }
    }
}

impl fmt::Display for StubSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            StubKind::Echo => f.write_str("echo"),
            StubKind::Noise => write!(f, "noise:{}:{}", self.noise_seed, self.dropout),
            StubKind::Memorizer => {
                let trigger = match self.trigger {
                    Trigger::ExactSource => "exact",
                    Trigger::IdKeyed => "id",
                    Trigger::EntitySensitive => "entity",
                };
                let targets = match &self.memorized_targets {
                    Targets::All => "all".to_string(),
                    Targets::Only(set) => set.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
                };
                write!(f, "memorizer:{trigger}:{targets}:{}", self.noise_seed)
            }
        }
    }
}

pub struct StubModel {
    spec: StubSpec,
    corpus: Arc<MultiwayCorpus>,
    /// Entity surfaces of each benchmark source, keyed by (language, id).
    entity_surfaces: HashMap<(LangCode, u64), Vec<String>>,
}

impl StubModel {
    pub fn new(spec: StubSpec, corpus: Arc<MultiwayCorpus>) -> Self {
        Self {
            spec,
            corpus,
            entity_surfaces: HashMap::new(),
        }
    }

    pub fn with_entity_surfaces(mut self, surfaces: HashMap<(LangCode, u64), Vec<String>>) -> Self {
        self.entity_surfaces = surfaces;
        self
    }

    pub fn spec(&self) -> &StubSpec {
        &self.spec
    }

    fn benchmark_id(&self, lang: &LangCode, source: &str) -> Option<u64> {
        let segs = self.corpus.segments(lang).ok()?;
        segs.iter()
            .position(|s| s == source)
            .map(|row| self.corpus.ids()[row])
    }

    fn translate(&self, sentence_id: Option<u64>, src: &LangCode, tgt: &LangCode, source: &str) -> String {
        match self.spec.kind {
            StubKind::Echo => return source.to_string(),
            StubKind::Noise => return token_dropout(source, self.spec.dropout, self.spec.noise_seed),
            StubKind::Memorizer => {}
        }
        if !self.spec.memorized_targets.contains(tgt) {
            return source.to_string();
        }
        let reference = |id: u64| self.corpus.segment(tgt, id).ok().map(str::to_string);
        let shuffled = |id: u64| reference(id).map(|r| scramble(&r, tgt, self.spec.noise_seed, id));
        let Some(id) = sentence_id else {
            // Out-of-benchmark request: only a verbatim benchmark source can
            // be recognised.
            return self
                .benchmark_id(src, source)
                .filter(|_| self.spec.trigger == Trigger::ExactSource)
                .and_then(reference)
                .unwrap_or_else(|| source.to_string());
        };
        let out = match self.spec.trigger {
            Trigger::IdKeyed => reference(id),
            Trigger::ExactSource => match self.corpus.segment(src, id) {
                Ok(original) if original == source => reference(id),
                _ => shuffled(id),
            },
            Trigger::EntitySensitive => {
                let intact = self
                    .entity_surfaces
                    .get(&(src.clone(), id))
                    .is_none_or(|surfaces| surfaces.iter().all(|e| source.contains(e.as_str())));
                if intact {
                    reference(id)
                } else {
                    shuffled(id)
                }
            }
        };
        out.unwrap_or_else(|| source.to_string())
    }
}

/// Token-shuffled reference. Han-script text has few spaces, so it is
/// shuffled in units of the CJK tokenizer instead of whitespace tokens.
fn scramble(reference: &str, lang: &LangCode, seed: u64, id: u64) -> String {
    if !lang.is_han() {
        return shuffle_tokens(reference, seed, id);
    }
    let mut units = tokenize_cjk(reference);
    SplitMix64::keyed(seed, id).shuffle(&mut units);
    units.join(" ")
}

const ENTITY_POOL: &[(&str, &[&str])] = &[
    ("CARDINAL", &["250", "75", "900", "18", "4000"]),
    ("DATE", &["June", "Friday", "October", "Sunday", "April"]),
    ("EVENT", &["Sandy", "Harvey", "Olympics", "Renaissance"]),
    ("FAC", &["Gatwick", "Colosseum", "Pentagon", "Louvre"]),
    ("GPE", &["Lisbon", "Accra", "Hanoi", "Quito", "Oslo"]),
    ("LANGUAGE", &["Swahili", "Hindi", "Dutch", "Tagalog"]),
    ("LAW", &["Patriot Act", "Civil Rights Act", "Magna Carta"]),
    ("LOC", &["Rhine", "Sahara", "Andes", "Zambezi"]),
    ("MONEY", &["800 euros", "20 pounds", "65 rupees"]),
    ("NORP", &["Catholic", "Hindu", "Kenyan", "Norwegian"]),
    ("ORDINAL", &["second", "third", "fifth"]),
    ("ORG", &["Nokia", "Oxfam", "Airbus", "Reuters"]),
    ("PERCENT", &["40 percent", "7 percent"]),
    ("PERSON", &["Amara", "Lucas", "Chen", "Fatima", "Jonas"]),
    ("PRODUCT", &["Kindle", "Walkman", "Vespa"]),
    ("QUANTITY", &["15 litres", "60 tonnes", "3 miles"]),
    ("TIME", &["noon", "dawn", "dusk"]),
    ("WORK_OF_ART", &["Guernica", "Hamlet", "Dracula"]),
    ("MISC", &["Eurovision", "Brexit"]),
];

/// A pool entity of the same label that differs from `text`.
pub fn replacement_entity(label: &str, text: &str) -> String {
    let pool = ENTITY_POOL
        .iter()
        .find(|(l, _)| *l == label)
        .map(|(_, p)| *p)
        .unwrap_or(&["Zanzibar", "Timbuktu"]);
    let start = (fnv1a(text.as_bytes()) % pool.len() as u64) as usize;
    (0..pool.len())
        .map(|k| pool[(start + k) % pool.len()])
        .find(|cand| !cand.eq_ignore_ascii_case(text))
        .unwrap_or("Zanzibar")
        .to_string()
}

impl ModelBackend for StubModel {
    fn model_id(&self) -> String {
        format!("stub:{}", self.spec)
    }

    fn generate(&self, req: &ModelRequest<'_>) -> Result<String, BackendError> {
        let reply = match req.context {
            TaskContext::Translate {
                sentence_id,
                direction,
                source,
            } => {
                let text = self.translate(*sentence_id, &direction.src, &direction.tgt, source);
                if req.template_id == CHAT_TRANSLATE {
                    format!("{{{text}}}")
                } else {
                    text
                }
            }
            TaskContext::Paraphrase { source, .. } => match self.spec.kind {
                StubKind::Noise => token_dropout(source, self.spec.dropout, self.spec.noise_seed),
                _ => source.clone(),
            },
            TaskContext::EntityAlign {
                tgt_lang,
                entities,
                target_sentence,
            } => {
                let _ = target_sentence;
                let aligned: Vec<_> = entities
                    .iter()
                    .map(|(label, text)| json!({"label": label, "text": text, "eng": text}))
                    .collect();
                json!({ format!("entities_{}", tgt_lang.iso3()): aligned }).to_string()
            }
            TaskContext::EntityGenerate { entities } => {
                let generated: Vec<_> = entities
                    .iter()
                    .map(|(label, text)| {
                        json!({"label": label, "text": text, "new_ent": replacement_entity(label, text)})
                    })
                    .collect();
                serde_json::Value::Array(generated).to_string()
            }
            TaskContext::EntityTranslate { new_entity, .. } => new_entity.clone(),
        };
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        let s: StubSpec = "memorizer:exact:tam".parse().unwrap();
        assert_eq!(s.kind, StubKind::Memorizer);
        assert_eq!(s.trigger, Trigger::ExactSource);
        assert!(s.memorized_targets.contains(&"tam_Taml".parse().unwrap()));
        assert!(!s.memorized_targets.contains(&"fra_Latn".parse().unwrap()));
        let all: StubSpec = "memorizer:id:all:7".parse().unwrap();
        assert_eq!(all.memorized_targets, Targets::All);
        assert_eq!(all.noise_seed, 7);
        assert_eq!("noise:3:0.5".parse::<StubSpec>().unwrap().dropout, 0.5);
        assert!("memorizer:fuzzy:tam".parse::<StubSpec>().is_err());
        assert!("echo:1".parse::<StubSpec>().is_err());
        for s in ["echo", "noise:3:0.5", "memorizer:entity:fra_Latn,tam_Taml:2"] {
            let spec: StubSpec = s.parse().unwrap();
            assert_eq!(spec.to_string().parse::<StubSpec>().unwrap(), spec);
        }
    }

    #[test]
    fn replacement_differs() {
        for (label, pool) in ENTITY_POOL {
            for text in pool.iter() {
                let r = replacement_entity(label, text);
                assert!(!r.eq_ignore_ascii_case(text));
            }
        }
    }
}
