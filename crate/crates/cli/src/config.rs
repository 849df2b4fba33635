//! Run configuration: a JSON file overlaid by command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use mtcontam::adapter::{
    Adapter, CallCache, DecodingParams, EndpointStyle, HttpBackend, ModelBackend, StubModel, StubSpec,
    TOKEN_ENV,
};
use mtcontam::corpus::{load_bitext, load_multiway, Bitext, LangCode, MultiwayCorpus};
use mtcontam::metrics::{HttpScorer, OverlapScorer, SemanticScorer};
use mtcontam::probes::{Thresholds, TokenizerMap};
use mtcontam::toy;

use crate::Usage;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Directory of `<code>.<split>` files; the bundled toy corpus when unset.
    pub root: Option<PathBuf>,
    pub split: Option<String>,
    /// Out-of-benchmark control bitext for `control-gap`.
    pub control_src: Option<PathBuf>,
    pub control_tgt: Option<PathBuf>,
    /// English NER annotations (JSONL) for `probe-entities`.
    pub ner: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stub: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Completion-style endpoint instead of chat.
    pub completion: bool,
    pub timeout_secs: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    /// Languages to audit; every corpus language when empty.
    pub languages: Vec<String>,
    pub tokenizers: TokenizerMap,
    pub model: ModelConfig,
    /// Model that produces perturbed sources; the audited model when unset.
    pub helper: Option<ModelConfig>,
    /// `stub` or a scoring service URL. Stub models default to `stub`.
    pub scorer: Option<String>,
    pub params: DecodingParams,
    pub thresholds: Thresholds,
    pub parallelism: usize,
    /// Defaults to `<output_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            languages: Vec::new(),
            tokenizers: TokenizerMap::default(),
            model: ModelConfig::default(),
            helper: None,
            scorer: None,
            params: DecodingParams::default(),
            thresholds: Thresholds::default(),
            parallelism: mtcontam::adapter::DEFAULT_PARALLELISM,
            cache_dir: None,
            output_dir: PathBuf::from("mtcontam-out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| Usage(format!("--config {}: {e}", path.display())).into())
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate().map_err(|e| Usage(format!("decoding params: {e}")))?;
        if self.parallelism == 0 {
            return Err(Usage("--parallelism must be at least 1".into()).into());
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn split(&self) -> &str {
        self.corpus.split.as_deref().unwrap_or("dev")
    }

    pub fn uses_toy(&self) -> bool {
        self.corpus.root.is_none()
    }

    /// The corpus restricted to the configured languages, and its id.
    pub fn load_corpus(&self) -> Result<(MultiwayCorpus, String)> {
        match &self.corpus.root {
            None => {
                let full = toy::corpus();
                let langs = self.resolve_in(&full, &self.languages)?;
                Ok((full.select(&langs)?, toy::CORPUS_ID.to_string()))
            }
            Some(root) => {
                if self.languages.is_empty() {
                    return Err(Usage("--langs is required with --corpus".into()).into());
                }
                let langs = self
                    .languages
                    .iter()
                    .map(|c| LangCode::resolve(c).map_err(|e| Usage(format!("--langs: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                let corpus = load_multiway(root, &langs, self.split())?;
                Ok((corpus, format!("{}:{}", root.display(), self.split())))
            }
        }
    }

    /// Maps user codes onto the corpus's own codes; empty means all.
    pub fn resolve_in(&self, corpus: &MultiwayCorpus, codes: &[String]) -> Result<Vec<LangCode>> {
        if codes.is_empty() {
            return Ok(corpus.languages().to_vec());
        }
        codes.iter().map(|c| resolve_lang(corpus, c)).collect()
    }

    pub fn control(&self, corpus: &MultiwayCorpus, direction_hint: Option<&str>) -> Result<Bitext> {
        match (&self.corpus.control_src, &self.corpus.control_tgt) {
            (Some(s), Some(t)) => {
                let d = direction_hint.ok_or_else(|| Usage("--direction is required with a control bitext".into()))?;
                let (src, tgt) = parse_direction(corpus, d)?;
                Ok(load_bitext(s, t, src, tgt)?)
            }
            (None, None) if self.uses_toy() => Ok(toy::control()),
            (None, None) => Err(Usage("--control-src and --control-tgt are required with --corpus".into()).into()),
            _ => Err(Usage("--control-src and --control-tgt go together".into()).into()),
        }
    }

    pub fn adapter(
        &self,
        model: &ModelConfig,
        corpus: &Arc<MultiwayCorpus>,
        stub_hook: impl FnOnce(StubModel) -> StubModel,
    ) -> Result<Adapter> {
        check_model(model)?;
        let backend: Arc<dyn ModelBackend> = match (&model.stub, &model.endpoint) {
            (Some(spec), None) => {
                let spec: StubSpec = spec.parse().map_err(|e: String| Usage(format!("--stub: {e}")))?;
                Arc::new(stub_hook(StubModel::new(spec, corpus.clone())))
            }
            (None, Some(url)) => {
                let name = model.model.clone().ok_or_else(|| Usage("--model is required with --endpoint".into()))?;
                let style = if model.completion { EndpointStyle::Completion } else { EndpointStyle::Chat };
                let timeout = Duration::from_secs(model.timeout_secs.unwrap_or(120));
                let token = std::env::var(TOKEN_ENV).ok();
                Arc::new(HttpBackend::new(url, name, style, token, timeout).map_err(|e| anyhow::anyhow!("{}", e.message))?)
            }
            _ => unreachable!("checked above"),
        };
        Ok(Adapter::new(backend)
            .with_cache(CallCache::open(self.cache_dir())?)
            .with_parallelism(self.parallelism))
    }

    pub fn helper_model(&self) -> &ModelConfig {
        self.helper.as_ref().unwrap_or(&self.model)
    }

    pub fn scorer(&self) -> Result<Option<Box<dyn SemanticScorer>>> {
        let choice = self
            .scorer
            .clone()
            .or_else(|| self.model.stub.as_ref().map(|_| "stub".to_string()));
        Ok(match choice.as_deref() {
            None | Some("none") => None,
            Some("stub") => Some(Box::new(OverlapScorer::default())),
            Some(url) if url.starts_with("http://") || url.starts_with("https://") => {
                Some(Box::new(HttpScorer::new(url, std::env::var(TOKEN_ENV).ok())?))
            }
            Some(other) => return Err(Usage(format!("--scorer {other:?}: expected stub, none or a URL")).into()),
        })
    }
}

fn check_model(m: &ModelConfig) -> Result<()> {
    match (&m.stub, &m.endpoint) {
        (Some(_), Some(_)) => Err(Usage("--stub and --endpoint are mutually exclusive".into()).into()),
        (None, None) => Err(Usage("one of --stub or --endpoint is required".into()).into()),
        _ => Ok(()),
    }
}

pub fn resolve_lang(corpus: &MultiwayCorpus, code: &str) -> Result<LangCode> {
    let lang = LangCode::resolve(code).map_err(|e| Usage(format!("language {code:?}: {e}")))?;
    Ok(corpus
        .language(&lang)
        .map_err(|_| Usage(format!("language {code:?} is not in the corpus")))?
        .clone())
}

/// `src-tgt` with codes resolved against the corpus.
pub fn parse_direction(corpus: &MultiwayCorpus, text: &str) -> Result<(LangCode, LangCode)> {
    let (s, t) = text
        .split_once('-')
        .ok_or_else(|| Usage(format!("--direction {text:?}: expected SRC-TGT")))?;
    Ok((resolve_lang(corpus, s)?, resolve_lang(corpus, t)?))
}
