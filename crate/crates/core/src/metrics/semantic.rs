//! Semantic similarity scores come from an external service; this module
//! only speaks its wire protocol and offers deterministic in-process stand-ins.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::tokenize::TokenizerId;
use super::MetricsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticScore {
    pub value: f64,
    pub scorer_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticBatch {
    pub scores: Vec<SemanticScore>,
    pub mean: f64,
    pub scorer_id: String,
}

pub trait SemanticScorer: Send + Sync {
    fn scorer_id(&self) -> String;

    /// Raw per-segment values for equal-length inputs.
    fn score_values(
        &self,
        srcs: &[String],
        hyps: &[String],
        refs: &[String],
    ) -> Result<(Vec<f64>, String), MetricsError>;
}

/// Scores a batch and checks the reply against the request.
pub fn semantic_score_batch(
    hyps: &[String],
    refs: &[String],
    srcs: &[String],
    scorer: &dyn SemanticScorer,
) -> Result<SemanticBatch, MetricsError> {
    if hyps.len() != refs.len() || hyps.len() != srcs.len() {
        return Err(MetricsError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (values, scorer_id) = scorer.score_values(srcs, hyps, refs)?;
    if values.len() != hyps.len() {
        return Err(MetricsError::MalformedScorerReply(format!(
            "expected {} scores, got {}",
            hyps.len(),
            values.len()
        )));
    }
    if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(MetricsError::MalformedScorerReply(format!(
            "score {bad} outside [0, 1]"
        )));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(SemanticBatch {
        scores: values
            .into_iter()
            .map(|value| SemanticScore {
                value,
                scorer_id: scorer_id.clone(),
            })
            .collect(),
        mean,
        scorer_id,
    })
}

#[derive(Serialize)]
struct ScorerRequest<'a> {
    srcs: &'a [String],
    hyps: &'a [String],
    refs: &'a [String],
}

#[derive(Deserialize)]
struct ScorerReply {
    scores: Vec<f64>,
    scorer_id: String,
}

/// Client for a scoring service: POST `{"srcs", "hyps", "refs"}`, reply
/// `{"scores", "scorer_id"}`.
pub struct HttpScorer {
    url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>, token: Option<String>) -> Result<Self, MetricsError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| MetricsError::ScorerUnavailable(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            token,
            client,
        })
    }
}

impl SemanticScorer for HttpScorer {
    fn scorer_id(&self) -> String {
        format!("http:{}", self.url)
    }

    fn score_values(
        &self,
        srcs: &[String],
        hyps: &[String],
        refs: &[String],
    ) -> Result<(Vec<f64>, String), MetricsError> {
        let mut req = self.client.post(&self.url).json(&ScorerRequest { srcs, hyps, refs });
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| MetricsError::ScorerUnavailable(e.to_string()))?;
        if resp.status() != reqwest::StatusCode::OK {
            return Err(MetricsError::ScorerUnavailable(format!(
                "status {}",
                resp.status()
            )));
        }
        let body = resp
            .text()
            .map_err(|e| MetricsError::ScorerUnavailable(e.to_string()))?;
        let reply: ScorerReply = serde_json::from_str(&body)
            .map_err(|e| MetricsError::MalformedScorerReply(e.to_string()))?;
        Ok((reply.scores, reply.scorer_id))
    }
}

/// Returns the same value for every segment.
pub struct ConstantScorer(pub f64);

impl SemanticScorer for ConstantScorer {
    fn scorer_id(&self) -> String {
        format!("stub:const:{}", self.0)
    }

    fn score_values(
        &self,
        _srcs: &[String],
        hyps: &[String],
        _refs: &[String],
    ) -> Result<(Vec<f64>, String), MetricsError> {
        Ok((vec![self.0; hyps.len()], self.scorer_id()))
    }
}

/// Deterministic stand-in: mean of unigram and bigram F1 between hypothesis
/// and reference tokens. 1.0 for identical segments, near 0 for unrelated
/// ones, and penalizes reordering through the bigram term.
pub struct OverlapScorer {
    pub tokenizer: TokenizerId,
}

impl Default for OverlapScorer {
    fn default() -> Self {
        Self {
            tokenizer: TokenizerId::Cjk13a,
        }
    }
}

fn f1(hyp: &[&[String]], reference: &[&[String]]) -> f64 {
    if hyp.is_empty() && reference.is_empty() {
        return 1.0;
    }
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&[String], i64> = HashMap::new();
    for g in reference {
        *counts.entry(g).or_insert(0) += 1;
    }
    let mut hit = 0;
    for g in hyp {
        if let Some(c) = counts.get_mut(g) {
            if *c > 0 {
                *c -= 1;
                hit += 1;
            }
        }
    }
    2.0 * hit as f64 / (hyp.len() + reference.len()) as f64
}

pub fn overlap_similarity(hyp: &str, reference: &str, tok: TokenizerId) -> f64 {
    let h = tok.tokenize(hyp);
    let r = tok.tokenize(reference);
    fn uni(t: &[String]) -> Vec<&[String]> {
        t.chunks(1).collect()
    }
    fn bi(t: &[String]) -> Vec<&[String]> {
        t.windows(2).collect()
    }
    let u = f1(&uni(&h), &uni(&r));
    let b = if h.len() < 2 && r.len() < 2 {
        u
    } else {
        f1(&bi(&h), &bi(&r))
    };
    (u + b) / 2.0
}

impl SemanticScorer for OverlapScorer {
    fn scorer_id(&self) -> String {
        "stub:overlap-f1".to_string()
    }

    fn score_values(
        &self,
        _srcs: &[String],
        hyps: &[String],
        refs: &[String],
    ) -> Result<(Vec<f64>, String), MetricsError> {
        let values = hyps
            .iter()
            .zip(refs)
            .map(|(h, r)| overlap_similarity(h, r, self.tokenizer))
            .collect();
        Ok((values, self.scorer_id()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn constant_passthrough() {
        let h = strings(&["a", "b"]);
        let batch = semantic_score_batch(&h, &h, &h, &ConstantScorer(0.9)).unwrap();
        assert!(batch.scores.iter().all(|s| s.value == 0.9));
        assert!((batch.mean - 0.9).abs() < 1e-12);
    }

    struct Short;
    impl SemanticScorer for Short {
        fn scorer_id(&self) -> String {
            "short".into()
        }
        fn score_values(
            &self,
            _: &[String],
            _: &[String],
            _: &[String],
        ) -> Result<(Vec<f64>, String), MetricsError> {
            Ok((vec![0.5], "short".into()))
        }
    }

    #[test]
    fn reply_length_checked() {
        let h = strings(&["a", "b"]);
        assert!(matches!(
            semantic_score_batch(&h, &h, &h, &Short),
            Err(MetricsError::MalformedScorerReply(_))
        ));
    }

    #[test]
    fn overlap_bounds() {
        let t = TokenizerId::Intl13a;
        assert_eq!(overlap_similarity("a b c", "a b c", t), 1.0);
        assert_eq!(overlap_similarity("x y z", "a b c", t), 0.0);
        let shuffled = overlap_similarity("c a b", "a b c", t);
        assert!(shuffled > 0.5 && shuffled < 1.0);
    }
}
