use serde::{Deserialize, Serialize};

use super::{DecodingParams, Message};
use crate::corpus::{Direction, LangCode};

/// Structured view of what a request asks for. Remote backends only see the
/// rendered messages; stubs answer from this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskContext {
    Translate {
        /// Benchmark sentence id, absent for out-of-benchmark text.
        sentence_id: Option<u64>,
        direction: Direction,
        source: String,
    },
    Paraphrase {
        lang: LangCode,
        source: String,
    },
    EntityAlign {
        tgt_lang: LangCode,
        /// (label, English surface) pairs.
        entities: Vec<(String, String)>,
        target_sentence: String,
    },
    EntityGenerate {
        entities: Vec<(String, String)>,
    },
    EntityTranslate {
        tgt_lang: LangCode,
        new_entity: String,
        reference: String,
    },
}

pub struct ModelRequest<'a> {
    pub template_id: &'a str,
    pub messages: &'a [Message],
    pub params: &'a DecodingParams,
    pub context: &'a TaskContext,
}

#[derive(Clone, Debug)]
pub struct BackendError {
    pub message: String,
    /// Worth retrying (connection failure, 429, 5xx).
    pub transient: bool,
}

impl BackendError {
    pub fn transient(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            transient: true,
        }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            transient: false,
        }
    }
}

pub trait ModelBackend: Send + Sync {
    fn model_id(&self) -> String;

    /// Whether the chat translation template should be used (otherwise the
    /// completion template).
    fn is_chat(&self) -> bool {
        true
    }

    fn generate(&self, request: &ModelRequest<'_>) -> Result<String, BackendError>;
}
