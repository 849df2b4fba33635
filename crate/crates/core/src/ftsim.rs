//! Cross-direction contamination experiment: fine-tuning data and trainer
//! config for pivot↔xxx directions, and the base-vs-tuned matrix diff.
//!
//! Training happens outside this crate; the exported chat records use the
//! same chat translation prompt the audit evaluates with.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::adapter::{bindings, builtin, Message, Role, CHAT_TRANSLATE};
use crate::corpus::{CorpusError, Direction, LangCode, MultiwayCorpus};
use crate::probes::ScoreMatrix;

#[derive(Debug, Error)]
pub enum FtError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("matrices do not match: {0}")]
    MatrixMismatch(String),
    #[error("plan: {0}")]
    BadPlan(String),
    #[error("write: {0}")]
    Io(#[from] std::io::Error),
}

/// Trainer settings of the reference fine-tuning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub base_model: String,
    pub attention_dropout: f64,
    pub sequence_len: u32,
    pub sample_packing: bool,
    pub pad_to_sequence_len: bool,
    pub num_epochs: u32,
    pub micro_batch_size: u32,
    pub gradient_accumulation_steps: u32,
    /// Kept as text so the emitted value is exactly `5e-6`.
    pub learning_rate: String,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub lr_scheduler: String,
    pub max_grad_norm: f64,
    pub optim: String,
    pub deepspeed: String,
    pub torch_distributed_type: String,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            base_model: "meta-llama/Meta-Llama-3.1-8B-Instruct".into(),
            attention_dropout: 0.1,
            sequence_len: 512,
            sample_packing: true,
            pad_to_sequence_len: true,
            num_epochs: 3,
            micro_batch_size: 4,
            gradient_accumulation_steps: 8,
            learning_rate: "5e-6".into(),
            weight_decay: 0.05,
            warmup_ratio: 0.02,
            lr_scheduler: "cosine".into(),
            max_grad_norm: 0.25,
            optim: "adamw_torch".into(),
            deepspeed: "deepspeed_configs/zero3_bf16.json".into(),
            torch_distributed_type: "DEEPSPEED".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetunePlan {
    pub pivot: LangCode,
    /// All languages of the experiment, pivot included.
    pub langs: Vec<LangCode>,
    pub hyperparameters: Hyperparameters,
}

impl FinetunePlan {
    pub fn new(pivot: LangCode, langs: Vec<LangCode>) -> Result<Self, FtError> {
        if !langs.contains(&pivot) {
            return Err(FtError::BadPlan(format!("pivot {pivot} is not among the languages")));
        }
        crate::corpus::directions(&langs).or_else(|e| match e {
            CorpusError::TooFewLanguages(_) => Ok(Vec::new()),
            other => Err(other),
        })?;
        Ok(Self {
            pivot,
            langs,
            hyperparameters: Hyperparameters::default(),
        })
    }

    pub fn others(&self) -> impl Iterator<Item = &LangCode> {
        self.langs.iter().filter(move |l| **l != self.pivot)
    }

    /// pivot→xxx then xxx→pivot, per language in plan order.
    pub fn seen(&self) -> Vec<Direction> {
        self.others()
            .flat_map(|x| {
                [
                    Direction::new(self.pivot.clone(), x.clone()),
                    Direction::new(x.clone(), self.pivot.clone()),
                ]
            })
            .collect()
    }

    pub fn is_seen(&self, d: &Direction) -> bool {
        d.src == self.pivot || d.tgt == self.pivot
    }

    /// Every other ordered pair, row-major.
    pub fn unseen(&self) -> Vec<Direction> {
        let mut out = Vec::new();
        for s in self.others() {
            for t in self.others() {
                if s != t {
                    out.push(Direction::new(s.clone(), t.clone()));
                }
            }
        }
        out
    }
}

/// Writes one chat record per (sentence, seen direction) as JSON lines and
/// returns the record count.
pub fn export_pairs(corpus: &MultiwayCorpus, plan: &FinetunePlan, out: &mut impl Write) -> Result<usize, FtError> {
    let template = builtin(CHAT_TRANSLATE).expect("builtin template");
    let seen = plan.seen();
    if seen.is_empty() {
        log::warn!("plan has only the pivot language; nothing to export");
    }
    let mut n = 0;
    for direction in &seen {
        let src = corpus.language(&direction.src)?;
        let tgt = corpus.language(&direction.tgt)?;
        let sources = corpus.segments(src)?;
        let targets = corpus.segments(tgt)?;
        for (sent, reference) in sources.iter().zip(targets) {
            let b = bindings([
                ("src_name", src.display_name()),
                ("tgt_name", tgt.display_name()),
                ("sent", sent),
            ]);
            let mut messages = template.render(&b).expect("all placeholders bound");
            messages.push(Message {
                role: Role::Assistant,
                content: reference.clone(),
            });
            serde_json::to_writer(&mut *out, &json!({ "messages": messages }))
                .map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
            n += 1;
        }
    }
    Ok(n)
}

fn yaml_float(x: f64) -> String {
    format!("{x:?}")
}

/// Trainer config with exactly the reference keys, in reference order.
pub fn emit_config(plan: &FinetunePlan) -> String {
    let h = &plan.hyperparameters;
    [
        format!("base_model: {}", h.base_model),
        "model_config:".to_string(),
        format!("    attention_dropout: {}", yaml_float(h.attention_dropout)),
        format!("sequence_len: {}", h.sequence_len),
        format!("sample_packing: {}", h.sample_packing),
        format!("pad_to_sequence_len: {}", h.pad_to_sequence_len),
        format!("num_epochs: {}", h.num_epochs),
        format!("micro_batch_size: {}", h.micro_batch_size),
        format!("gradient_accumulation_steps: {}", h.gradient_accumulation_steps),
        format!("learning_rate: {}", h.learning_rate),
        format!("weight_decay: {}", yaml_float(h.weight_decay)),
        format!("warmup_ratio: {}", yaml_float(h.warmup_ratio)),
        format!("lr_scheduler: {}", h.lr_scheduler),
        format!("max_grad_norm: {}", yaml_float(h.max_grad_norm)),
        format!("optim: {}", h.optim),
        format!("deepspeed: {}", h.deepspeed),
        format!("torch_distributed_type: {}", h.torch_distributed_type),
    ]
    .join("\n")
        + "\n"
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    pub direction: Direction,
    /// tuned − base; absent when either cell is invalid.
    pub delta_bleu: Option<f64>,
    pub delta_semantic: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageDelta {
    pub lang: LangCode,
    /// Mean Δbleu over unseen directions into the language.
    pub mean_delta_as_target: Option<f64>,
    /// Mean Δbleu over unseen directions out of the language.
    pub mean_delta_as_source: Option<f64>,
    pub mean_delta_semantic_as_target: Option<f64>,
    pub mean_delta_semantic_as_source: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossDirectionSummary {
    pub pivot: LangCode,
    pub seen: Vec<CellDelta>,
    pub unseen: Vec<CellDelta>,
    pub per_language: Vec<LanguageDelta>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-cell tuned − base differences, split into seen and unseen
/// directions, with per-language target/source means over unseen cells.
pub fn cross_direction_summary(
    base: &ScoreMatrix,
    tuned: &ScoreMatrix,
    plan: &FinetunePlan,
) -> Result<CrossDirectionSummary, FtError> {
    if base.languages != tuned.languages {
        return Err(FtError::MatrixMismatch("language lists differ".into()));
    }
    if base.meta.corpus_id != tuned.meta.corpus_id {
        return Err(FtError::MatrixMismatch(format!(
            "corpus {} vs {}",
            base.meta.corpus_id, tuned.meta.corpus_id
        )));
    }
    if base.meta.tokenizers != tuned.meta.tokenizers {
        return Err(FtError::MatrixMismatch("tokenizer configurations differ".into()));
    }
    if let Some(l) = plan.langs.iter().find(|l| !base.languages.contains(l)) {
        return Err(FtError::MatrixMismatch(format!("plan language {l} is not in the matrices")));
    }
    let delta = |d: &Direction| -> Result<CellDelta, FtError> {
        let (Some(b), Some(t)) = (base.get(d), tuned.get(d)) else {
            return Err(FtError::MatrixMismatch(format!("cell {d} missing")));
        };
        let diff = |x: Option<f64>, y: Option<f64>| x.zip(y).map(|(t, b)| t - b);
        Ok(CellDelta {
            direction: d.clone(),
            delta_bleu: diff(t.bleu_score(), b.bleu_score()),
            delta_semantic: diff(
                t.semantic.filter(|_| t.valid),
                b.semantic.filter(|_| b.valid),
            ),
        })
    };
    let seen = plan.seen().iter().map(delta).collect::<Result<Vec<_>, _>>()?;
    let unseen = plan.unseen().iter().map(delta).collect::<Result<Vec<_>, _>>()?;
    let per_language = plan
        .others()
        .map(|lang| {
            let into = || unseen.iter().filter(|c| c.direction.tgt == *lang);
            let from = || unseen.iter().filter(|c| c.direction.src == *lang);
            LanguageDelta {
                lang: lang.clone(),
                mean_delta_as_target: mean(into().map(|c| c.delta_bleu)),
                mean_delta_as_source: mean(from().map(|c| c.delta_bleu)),
                mean_delta_semantic_as_target: mean(into().map(|c| c.delta_semantic)),
                mean_delta_semantic_as_source: mean(from().map(|c| c.delta_semantic)),
            }
        })
        .collect();
    Ok(CrossDirectionSummary {
        pivot: plan.pivot.clone(),
        seen,
        unseen,
        per_language,
    })
}
