//! Model calls: prompt rendering, the call cache, retries, bounded request
//! parallelism and reply extraction, over an HTTP endpoint or a stub.

mod backend;
mod cache;
mod extract;
mod http;
mod stub;
mod template;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use backend::{BackendError, ModelBackend, ModelRequest, TaskContext};
pub use cache::{cache_key, CallCache};
pub use extract::{extract_braced, first_json_value, first_line, Extracted};
pub use http::{EndpointStyle, HttpBackend, TOKEN_ENV};
pub use stub::{replacement_entity, StubKind, StubModel, StubSpec, Targets, Trigger, DEFAULT_DROPOUT};
pub use template::{
    bindings, builtin, Message, PromptTemplate, Role, BUILTIN_IDS, CHAT_TRANSLATE,
    COMPLETION_TRANSLATE, ENTITY_ALIGN, ENTITY_GENERATE, ENTITY_TRANSLATE, PARAPHRASE,
};

use crate::corpus::{Direction, MultiwayCorpus};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("template {template}: placeholder {name:?} is unbound")]
    UnboundPlaceholder { template: String, name: String },
    #[error("bad template {id}: {reason}")]
    BadTemplate { id: String, reason: String },
    #[error("cache: {0}")]
    Cache(String),
    #[error("model endpoint unreachable after {attempts} attempts: {message}")]
    AdapterUnreachable { attempts: u32, message: String },
    #[error("model error: {0}")]
    ModelError(String),
    #[error("reply is not valid JSON: {0}")]
    MalformedModelJson(String),
    #[error("reply violates the expected shape: {0}")]
    SchemaViolation(String),
    #[error("{failed} of {total} items failed")]
    PartialBatch { failed: usize, total: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_new_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_new_tokens: 256,
            stop_sequences: Vec::new(),
            seed: None,
        }
    }
}

impl DecodingParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_new_tokens == 0 {
            return Err("max_new_tokens must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub cache_key: String,
    pub model_id: String,
    pub template_id: String,
    pub messages: Vec<Message>,
    pub params: DecodingParams,
    pub raw_reply: String,
    pub extracted: String,
    #[serde(default)]
    pub unbraced: bool,
    pub timestamp_unix: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

pub const DEFAULT_PARALLELISM: usize = 8;

/// How the answer is pulled out of a raw reply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Extraction {
    Braced,
    FirstLine,
    Raw,
}

fn extraction_for(template_id: &str) -> Extraction {
    match template_id {
        CHAT_TRANSLATE => Extraction::Braced,
        ENTITY_ALIGN | ENTITY_GENERATE => Extraction::Raw,
        _ => Extraction::FirstLine,
    }
}

/// One translation request: the source text and, for benchmark sentences,
/// its id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranslateItem {
    pub id: u64,
    pub benchmark_id: Option<u64>,
    pub source: String,
}

/// Per-item results of a batch, in input order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchOutput {
    pub ids: Vec<u64>,
    pub hypotheses: Vec<Option<String>>,
    pub errors: Vec<Option<String>>,
    pub cache_keys: Vec<Option<String>>,
    /// Items whose reply had no braces and was taken whole.
    pub unbraced: usize,
}

impl BatchOutput {
    pub fn failed(&self) -> usize {
        self.errors.iter().filter(|e| e.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.failed() == 0
    }

    pub fn partial_error(&self) -> Option<AdapterError> {
        let failed = self.failed();
        (failed > 0).then_some(AdapterError::PartialBatch {
            failed,
            total: self.ids.len(),
        })
    }

    /// (id, hypothesis) for the items that succeeded.
    pub fn succeeded(&self) -> impl Iterator<Item = (u64, &str)> {
        self.ids
            .iter()
            .zip(&self.hypotheses)
            .filter_map(|(id, h)| h.as_deref().map(|h| (*id, h)))
    }
}

/// Expected shape of an entity-task reply.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum JsonShape {
    /// `{"entities_<key>": [{"label", "text", ...}]}` with the given labels
    /// in order.
    AlignedEntities { key: String, labels: Vec<String> },
    /// `[{"label", "text", "new_ent"}]` with the given labels in order.
    GeneratedEntities { labels: Vec<String> },
    Any,
}

impl JsonShape {
    /// Returns the entity list, validated.
    pub fn check(&self, value: &Value) -> Result<Value, AdapterError> {
        let violation = |m: String| Err(AdapterError::SchemaViolation(m));
        let (list, labels, extra) = match self {
            JsonShape::Any => return Ok(value.clone()),
            JsonShape::AlignedEntities { key, labels } => match value.get(key) {
                Some(list) => (list, labels, None),
                None => return violation(format!("missing key {key:?}")),
            },
            JsonShape::GeneratedEntities { labels } => (value, labels, Some("new_ent")),
        };
        let Some(items) = list.as_array() else {
            return violation("entity list is not an array".into());
        };
        if items.len() != labels.len() {
            return violation(format!("{} entities returned, {} expected", items.len(), labels.len()));
        }
        for (i, (item, want)) in items.iter().zip(labels).enumerate() {
            let field = |name: &str| item.get(name).and_then(Value::as_str);
            if field("label") != Some(want.as_str()) {
                return violation(format!("entity {i}: label {:?}, expected {want:?}", item.get("label")));
            }
            if field("text").is_none() {
                return violation(format!("entity {i}: missing string field \"text\""));
            }
            if let Some(extra) = extra {
                if field(extra).is_none() {
                    return violation(format!("entity {i}: missing string field {extra:?}"));
                }
            }
        }
        Ok(list.clone())
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub struct Adapter {
    backend: Arc<dyn ModelBackend>,
    cache: Option<CallCache>,
    retry: RetryPolicy,
    parallelism: usize,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl Adapter {
    pub fn new(backend: Arc<dyn ModelBackend>) -> Self {
        Self {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            parallelism: DEFAULT_PARALLELISM,
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: CallCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_parallelism(mut self, k: usize) -> Self {
        self.parallelism = k.max(1);
        self
    }

    pub fn model_id(&self) -> String {
        self.backend.model_id()
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn is_chat(&self) -> bool {
        self.backend.is_chat()
    }

    /// Requests that reached the backend, retries included.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    /// Renders, consults the cache, calls the backend with retries, extracts
    /// and caches. `attempt` salts the cache key for deliberate re-asks.
    pub fn call(
        &self,
        template_id: &str,
        bindings: &BTreeMap<String, String>,
        context: &TaskContext,
        params: &DecodingParams,
        attempt: u32,
    ) -> Result<CallRecord, AdapterError> {
        let template = builtin(template_id).ok_or_else(|| AdapterError::BadTemplate {
            id: template_id.to_string(),
            reason: "unknown template id".into(),
        })?;
        let messages = template.render(bindings)?;
        let model_id = self.backend.model_id();
        let key = cache_key(&model_id, template_id, &messages, params, attempt);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        let request = ModelRequest {
            template_id,
            messages: &messages,
            params,
            context,
        };
        let raw = self.generate_with_retry(&request)?;
        let (extracted, unbraced) = match extraction_for(template_id) {
            Extraction::Braced => {
                let e = extract_braced(&raw);
                (e.text, e.unbraced)
            }
            Extraction::FirstLine => (first_line(&raw), false),
            Extraction::Raw => (raw.trim().to_string(), false),
        };
        let record = CallRecord {
            cache_key: key,
            model_id,
            template_id: template_id.to_string(),
            messages,
            params: params.clone(),
            raw_reply: raw,
            extracted,
            unbraced,
            timestamp_unix: now_unix(),
        };
        if let Some(cache) = &self.cache {
            cache.put(&record)?;
        }
        Ok(record)
    }

    fn generate_with_retry(&self, request: &ModelRequest<'_>) -> Result<String, AdapterError> {
        let mut backoff = self.retry.initial_backoff;
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for n in 1..=attempts {
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            match self.backend.generate(request) {
                Ok(reply) => return Ok(reply),
                Err(e) if !e.transient => return Err(AdapterError::ModelError(e.message)),
                Err(e) => {
                    log::warn!("attempt {n}/{attempts} failed: {}", e.message);
                    last = e.message;
                    if n < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(AdapterError::AdapterUnreachable {
            attempts,
            message: last,
        })
    }

    /// Applies `f` to every item with at most `parallelism` in flight;
    /// results come back in input order.
    pub fn map_parallel<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
        let workers = self.parallelism.min(items.len()).max(1);
        if workers == 1 {
            return items.iter().map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
        let done: Vec<Vec<(usize, R)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    s.spawn(|| {
                        let mut out = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            if i >= items.len() {
                                break out;
                            }
                            out.push((i, f(&items[i])));
                        }
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("adapter worker panicked"))
                .collect()
        });
        for (i, r) in done.into_iter().flatten() {
            slots[i] = Some(r);
        }
        slots
            .into_iter()
            .map(|r| r.expect("every item is processed"))
            .collect()
    }

    fn translate_bindings(&self, direction: &Direction, source: &str) -> (&'static str, BTreeMap<String, String>) {
        let src_name = direction.src.display_name();
        let tgt_name = direction.tgt.display_name();
        if self.backend.is_chat() {
            (
                CHAT_TRANSLATE,
                bindings([("src_name", src_name), ("tgt_name", tgt_name), ("sent", source)]),
            )
        } else {
            (COMPLETION_TRANSLATE, bindings([("sent", source), ("tgt_lang", tgt_name)]))
        }
    }

    pub fn translate_one(
        &self,
        direction: &Direction,
        item: &TranslateItem,
        params: &DecodingParams,
    ) -> Result<CallRecord, AdapterError> {
        let (template_id, b) = self.translate_bindings(direction, &item.source);
        let context = TaskContext::Translate {
            sentence_id: item.benchmark_id,
            direction: direction.clone(),
            source: item.source.clone(),
        };
        self.call(template_id, &b, &context, params, 0)
    }

    /// Translates arbitrary items; failures are reported per item.
    pub fn translate_items(
        &self,
        items: &[TranslateItem],
        direction: &Direction,
        params: &DecodingParams,
    ) -> BatchOutput {
        let results = self.map_parallel(items, |item| self.translate_one(direction, item, params));
        let mut out = BatchOutput::default();
        for (item, r) in items.iter().zip(results) {
            out.ids.push(item.id);
            match r {
                Ok(rec) => {
                    out.unbraced += usize::from(rec.unbraced);
                    out.hypotheses.push(Some(rec.extracted));
                    out.cache_keys.push(Some(rec.cache_key));
                    out.errors.push(None);
                }
                Err(e) => {
                    out.hypotheses.push(None);
                    out.cache_keys.push(None);
                    out.errors.push(Some(e.to_string()));
                }
            }
        }
        out
    }

    /// Translates the benchmark sources of `direction.src` in id order.
    pub fn translate_batch(
        &self,
        corpus: &MultiwayCorpus,
        direction: &Direction,
        params: &DecodingParams,
    ) -> Result<BatchOutput, crate::corpus::CorpusError> {
        let sources = corpus.segments(&direction.src)?;
        let items: Vec<TranslateItem> = corpus
            .ids()
            .iter()
            .zip(sources)
            .map(|(&id, s)| TranslateItem {
                id,
                benchmark_id: Some(id),
                source: s.clone(),
            })
            .collect();
        Ok(self.translate_items(&items, direction, params))
    }

    /// A call whose reply must contain JSON of the given shape. A reply
    /// without parsable JSON is re-asked once under a salted cache key.
    pub fn json_task(
        &self,
        template_id: &str,
        bindings: &BTreeMap<String, String>,
        context: &TaskContext,
        params: &DecodingParams,
        shape: &JsonShape,
    ) -> Result<(Value, CallRecord), AdapterError> {
        let mut last = String::new();
        for attempt in 0..2 {
            let record = self.call(template_id, bindings, context, params, attempt)?;
            match first_json_value(&record.raw_reply) {
                Some(v) => return shape.check(&v).map(|v| (v, record)),
                None => last = record.raw_reply,
            }
        }
        Err(AdapterError::MalformedModelJson(last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<String, BackendError>>>,
    }

    impl ModelBackend for Scripted {
        fn model_id(&self) -> String {
            "scripted".into()
        }
        fn generate(&self, _: &ModelRequest<'_>) -> Result<String, BackendError> {
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn scripted(replies: Vec<Result<String, BackendError>>) -> Adapter {
        Adapter::new(Arc::new(Scripted {
            replies: Mutex::new(replies),
        }))
        .with_retry(RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::ZERO,
        })
    }

    fn gen_ctx() -> (BTreeMap<String, String>, TaskContext) {
        let ents = vec![("GPE".to_string(), "Paris".to_string()), ("PERSON".to_string(), "Ana".to_string())];
        (
            bindings([("ent_list", "[]")]),
            TaskContext::EntityGenerate { entities: ents },
        )
    }

    fn gen_shape() -> JsonShape {
        JsonShape::GeneratedEntities {
            labels: vec!["GPE".into(), "PERSON".into()],
        }
    }

    #[test]
    fn json_task_extracts_from_prose_and_checks_count() {
        let good = r#"Sure: [{"label":"GPE","text":"Paris","new_ent":"Oslo"},{"label":"PERSON","text":"Ana","new_ent":"Bo"}] done"#;
        let a = scripted(vec![Ok(good.into())]);
        let (b, ctx) = gen_ctx();
        let (v, _) = a
            .json_task(ENTITY_GENERATE, &b, &ctx, &DecodingParams::default(), &gen_shape())
            .unwrap();
        assert_eq!(v.as_array().unwrap().len(), 2);

        let short = r#"[{"label":"GPE","text":"Paris","new_ent":"Oslo"}]"#;
        let a = scripted(vec![Ok(short.into())]);
        let err = a
            .json_task(ENTITY_GENERATE, &b, &ctx, &DecodingParams::default(), &gen_shape())
            .unwrap_err();
        assert!(matches!(err, AdapterError::SchemaViolation(_)));
    }

    #[test]
    fn json_task_retries_once() {
        let (b, ctx) = gen_ctx();
        let a = scripted(vec![Ok("no json".into()), Ok("still none".into())]);
        let err = a
            .json_task(ENTITY_GENERATE, &b, &ctx, &DecodingParams::default(), &JsonShape::Any)
            .unwrap_err();
        assert!(matches!(err, AdapterError::MalformedModelJson(_)));
        assert_eq!(a.backend_calls(), 2);

        let a = scripted(vec![Ok("oops".into()), Ok("[]".into())]);
        assert!(a
            .json_task(ENTITY_GENERATE, &b, &ctx, &DecodingParams::default(), &JsonShape::Any)
            .is_ok());
    }

    #[test]
    fn aligned_shape_accepts_empty_list() {
        let shape = JsonShape::AlignedEntities {
            key: "entities_tam".into(),
            labels: vec![],
        };
        let v: Value = serde_json::from_str(r#"{"entities_tam": []}"#).unwrap();
        assert_eq!(shape.check(&v).unwrap(), Value::Array(vec![]));
        let v: Value = serde_json::from_str(r#"{"entities_fra": []}"#).unwrap();
        assert!(shape.check(&v).is_err());
    }

    #[test]
    fn transient_errors_are_retried_then_reported() {
        let (b, ctx) = gen_ctx();
        let a = scripted(vec![
            Err(BackendError::transient("503")),
            Err(BackendError::transient("503")),
            Ok("[]".into()),
        ]);
        assert!(a.call(ENTITY_GENERATE, &b, &ctx, &DecodingParams::default(), 0).is_ok());
        assert_eq!(a.backend_calls(), 3);

        let a = scripted(vec![
            Err(BackendError::transient("down")),
            Err(BackendError::transient("down")),
            Err(BackendError::transient("down")),
        ]);
        let err = a.call(ENTITY_GENERATE, &b, &ctx, &DecodingParams::default(), 0).unwrap_err();
        assert!(matches!(err, AdapterError::AdapterUnreachable { attempts: 3, .. }));

        let a = scripted(vec![Err(BackendError::permanent("400"))]);
        let err = a.call(ENTITY_GENERATE, &b, &ctx, &DecodingParams::default(), 0).unwrap_err();
        assert!(matches!(err, AdapterError::ModelError(_)));
        assert_eq!(a.backend_calls(), 1);
    }

    #[test]
    fn map_parallel_keeps_order() {
        let a = scripted(vec![]).with_parallelism(5);
        let items: Vec<u64> = (0..100).collect();
        let out = a.map_parallel(&items, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
