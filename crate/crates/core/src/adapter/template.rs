//! Prompt templates with `{name}` placeholders; `{{` and `}}` are literal
//! braces.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::AdapterError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    /// Raw prompt for completion-style endpoints.
    Prompt,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Prompt => "prompt",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Text(String),
    Var(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    id: String,
    roles: Vec<(Role, Vec<Piece>)>,
    placeholders: Vec<String>,
}

fn parse(text: &str) -> Result<Vec<Piece>, String> {
    let mut pieces = Vec::new();
    let mut buf = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                buf.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                buf.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(c) if c.is_ascii_alphanumeric() || c == '_' => name.push(c),
                        _ => return Err(format!("bad placeholder after {buf:?}")),
                    }
                }
                if name.is_empty() {
                    return Err("empty placeholder".into());
                }
                if !buf.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut buf)));
                }
                pieces.push(Piece::Var(name));
            }
            '}' => return Err(format!("unmatched '}}' after {buf:?}")),
            c => buf.push(c),
        }
    }
    if !buf.is_empty() {
        pieces.push(Piece::Text(buf));
    }
    Ok(pieces)
}

impl PromptTemplate {
    /// Compiles a template. The declared placeholders must be exactly the
    /// variables used in the role texts.
    pub fn new(id: &str, roles: &[(Role, &str)], placeholders: &[&str]) -> Result<Self, AdapterError> {
        let mut compiled = Vec::with_capacity(roles.len());
        let mut used = BTreeSet::new();
        for (role, text) in roles {
            let pieces = parse(text).map_err(|reason| AdapterError::BadTemplate {
                id: id.to_string(),
                reason,
            })?;
            for p in &pieces {
                if let Piece::Var(v) = p {
                    used.insert(v.clone());
                }
            }
            compiled.push((*role, pieces));
        }
        let declared: BTreeSet<String> = placeholders.iter().map(|s| s.to_string()).collect();
        if declared != used {
            return Err(AdapterError::BadTemplate {
                id: id.to_string(),
                reason: format!("declared {declared:?} but uses {used:?}"),
            });
        }
        Ok(Self {
            id: id.to_string(),
            roles: compiled,
            placeholders: placeholders.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn placeholders(&self) -> &[String] {
        &self.placeholders
    }

    pub fn is_completion(&self) -> bool {
        self.roles.iter().all(|(r, _)| *r == Role::Prompt)
    }

    /// Substitutes every placeholder verbatim.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<Vec<Message>, AdapterError> {
        if let Some(missing) = self.placeholders.iter().find(|p| !bindings.contains_key(*p)) {
            return Err(AdapterError::UnboundPlaceholder {
                template: self.id.clone(),
                name: missing.clone(),
            });
        }
        Ok(self
            .roles
            .iter()
            .map(|(role, pieces)| {
                let mut content = String::new();
                for p in pieces {
                    match p {
                        Piece::Text(t) => content.push_str(t),
                        Piece::Var(v) => content.push_str(&bindings[v]),
                    }
                }
                Message {
                    role: *role,
                    content,
                }
            })
            .collect())
    }
}

pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub const COMPLETION_TRANSLATE: &str = "bloomz-translate";
pub const CHAT_TRANSLATE: &str = "llama-translate";
pub const PARAPHRASE: &str = "llama-paraphrase";
pub const ENTITY_ALIGN: &str = "aya-entity-align";
pub const ENTITY_GENERATE: &str = "aya-entity-generate";
pub const ENTITY_TRANSLATE: &str = "aya-entity-translate";

const CHAT_TRANSLATE_SYSTEM: &str = "You are a helpful assistant that translates text. Your task is to translate a sentence that will be provided.";

const CHAT_TRANSLATE_USER: &str = "Translate the following {src_name} sentence to {tgt_name}. Your response should contain only the translation and be structured like this: {{{{Your response goes here}}}}\n{sent}";

const PARAPHRASE_USER: &str = concat!(
    "You are a native {lang_name} speaker.\n",
    "Task: Rephrase the following {lang_name} sentence.\n",
    "Constraints:\n",
    "- Output only one sentence.\n",
    "- Do not include explanations, notes, or formatting.\n",
    "- Do not repeat the input.\n",
    "- Do not add any extra characters or line breaks.\n\n",
    "Input:\n{src}\n\n",
    "Output:",
);

const ENTITY_ALIGN_USER: &str = concat!(
    "You will be given a parallel English sentence and its corresponding ",
    "{tgt_name} sentence. The labeled named entities of the English sentence ",
    "will be provided.\n\n",
    "Your task:\n",
    "- For each English entity, identify the exact surface form in the ",
    "{tgt_name} sentence that refers to the same real-world entity.\n",
    "- DO NOT add new entities.\n",
    "- The number of returned entities and the labels MUST match the English list.\n",
    "- Return each entity span exactly as it appears in the target sentence.\n",
    "- If an English entity appears multiple times, include all of them.\n",
    "- If the English entity list is empty, return an empty list: []\n\n",
    "Your output MUST be valid JSON ONLY, with this exact structure:\n\n",
    "{{\n",
    "  \"entities_{tgt_lang_code}\": [\n",
    "    {{\"label\": \"ENTITY_LABEL\", \"text\": \"ENTITY_IN_TARGET_LANGUAGE\", \"eng\": \"ENTITY_IN_ENGLISH\"}}\n",
    "  ]\n",
    "}}\n\n",
    "English Sentence:\n{src}\n\n",
    "English Entities:\n{ent_eng}\n\n",
    "{tgt_name} Sentence:\n{ref}\n\n",
    "Output JSON:",
);

const ENTITY_GENERATE_USER: &str = concat!(
    "You are given a list of named entities in English.\n",
    "For each entity, generate a NEW entity of the SAME label type.\n\n",
    "RULES:\n",
    "- Do NOT add or remove entities.\n",
    "- 'new_ent' must be a completely different real entity from the original.\n",
    "- Do NOT use entities found in the original 'text' value.\n",
    "- Synonyms, paraphrases, abbreviations, variants, or anything derived from the original are NOT allowed.\n",
    "- The new entity must be real, valid for its label, and not share the same referent.\n",
    "- Take the grammar structure of the entity into account if it is multiple words long.\n",
    "- Output JSON only.\n\n",
    "OUTPUT FORMAT:\n",
    "[{{\"label\": \"LABEL\", \"text\": \"ORIGINAL_TEXT_FROM_ENTITIES_LIST\", \"new_ent\": \"NEW_ENTITY\"}}]\n\n",
    "Entities:{ent_list}\n\n",
    "Output JSON only:",
);

const ENTITY_TRANSLATE_USER: &str = concat!(
    "Translate the following English *ENTITY* into {tgt_name}.\n\n",
    "RULES:\n",
    "- Your translation MUST be grammatically correct **for the position the entity occupies** ",
    "in the target-language sentence.\n",
    "- Imagine the translated entity being inserted into the sentence below.\n\n",
    "RESTRICTIONS:\n",
    "- Translate ONLY the entity.\n",
    "- Do NOT output the whole sentence.\n",
    "- Do NOT rewrite or paraphrase anything.\n",
    "- No explanations.\n",
    "- No punctuation or quotes.\n",
    "- Output ONLY the final translated entity.\n\n",
    "English Sentence (Original):\n{source}\n\n",
    "English Sentence After Replacement:\n{replaced_source}\n\n",
    "Target-Language Reference Sentence:\n{reference}\n\n",
    "ENTITY TO TRANSLATE:\n{new_entity}\n\n",
    "Output ONLY the translated entity:",
);

/// The six shipped templates, by id.
pub fn builtin(id: &str) -> Option<PromptTemplate> {
    let t = match id {
        COMPLETION_TRANSLATE => PromptTemplate::new(
            id,
            &[(Role::Prompt, "{{{sent}}}\nCan you translate this to {tgt_lang}?")],
            &["sent", "tgt_lang"],
        ),
        CHAT_TRANSLATE => PromptTemplate::new(
            id,
            &[
                (Role::System, CHAT_TRANSLATE_SYSTEM),
                (Role::User, CHAT_TRANSLATE_USER),
            ],
            &["src_name", "tgt_name", "sent"],
        ),
        PARAPHRASE => PromptTemplate::new(id, &[(Role::User, PARAPHRASE_USER)], &["lang_name", "src"]),
        ENTITY_ALIGN => PromptTemplate::new(
            id,
            &[(Role::User, ENTITY_ALIGN_USER)],
            &["tgt_name", "tgt_lang_code", "src", "ent_eng", "ref"],
        ),
        ENTITY_GENERATE => {
            PromptTemplate::new(id, &[(Role::User, ENTITY_GENERATE_USER)], &["ent_list"])
        }
        ENTITY_TRANSLATE => PromptTemplate::new(
            id,
            &[(Role::User, ENTITY_TRANSLATE_USER)],
            &["tgt_name", "source", "replaced_source", "reference", "new_entity"],
        ),
        _ => return None,
    };
    Some(t.expect("builtin templates compile"))
}

pub const BUILTIN_IDS: [&str; 6] = [
    COMPLETION_TRANSLATE,
    CHAT_TRANSLATE,
    PARAPHRASE,
    ENTITY_ALIGN,
    ENTITY_GENERATE,
    ENTITY_TRANSLATE,
];
