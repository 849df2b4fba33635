mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ModelConfig, RunConfig};

/// A usage problem: bad flag value, missing flag, malformed config file.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

const AFTER_HELP: &str = "\
Environment:
  MTCONTAM_API_TOKEN  bearer token sent to --endpoint, --helper-endpoint and an HTTP --scorer
  RUST_LOG            log filter (default: info)

Exit codes:
  0   success
  1   fatal error
  2   some items failed; the report was still written
  64  usage error";

#[derive(Parser)]
#[command(name = "mtcontam", version, about = "Contamination audits for multiway-parallel MT benchmarks", after_help = AFTER_HELP)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Corpus directory with `<code>.<split>` files (default: bundled toy corpus).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Corpus split, the file suffix (default: dev).
    #[arg(long, global = true)]
    split: Option<String>,
    /// Comma-separated languages (default: all corpus languages).
    #[arg(long, global = true, value_delimiter = ',')]
    langs: Option<Vec<String>>,
    /// Tokenizer override, LANG=intl-13a|cjk-13a|none. Repeatable.
    #[arg(long = "tokenizer", global = true)]
    tokenizers: Vec<String>,
    /// Stub model: echo, noise[:seed[:rate]], memorizer:<exact|id|entity>:<all|l1,l2>[:seed].
    #[arg(long, global = true)]
    stub: Option<String>,
    /// Inference endpoint URL.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Model name sent to the endpoint.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Use the completion prompt instead of chat.
    #[arg(long, global = true)]
    completion: bool,
    /// Stub for producing perturbed sources (default: the audited model).
    #[arg(long, global = true)]
    helper_stub: Option<String>,
    /// Endpoint for producing perturbed sources.
    #[arg(long, global = true)]
    helper_endpoint: Option<String>,
    /// Model name for --helper-endpoint.
    #[arg(long, global = true)]
    helper_model: Option<String>,
    /// Semantic scorer: stub, none or a service URL.
    #[arg(long, global = true)]
    scorer: Option<String>,
    /// Sampling temperature (default: 0).
    #[arg(long, global = true)]
    temperature: Option<f64>,
    /// Generation length limit (default: 256).
    #[arg(long, global = true)]
    max_new_tokens: Option<u32>,
    /// Concurrent model requests (default: 8).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Call cache directory (default: <output-dir>/cache).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Root for run directories (default: mtcontam-out).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Run subdirectory name (default: run-<unix time>).
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// Seed for the one-entity replacement choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the planned adapter call count and exit.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Control bitext source side (one segment per line).
    #[arg(long, global = true)]
    control_src: Option<PathBuf>,
    /// Control bitext target side.
    #[arg(long, global = true)]
    control_tgt: Option<PathBuf>,
    /// English NER annotations (JSONL).
    #[arg(long, global = true)]
    ner: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Translate and score every ordered language pair.
    EvalMatrix,
    /// Classify the cells of a score matrix.
    Classify {
        #[arg(long)]
        matrix: PathBuf,
        /// control-gap report or a {"src-tgt": bleu} map.
        #[arg(long)]
        controls: Option<PathBuf>,
    },
    /// Source-side against target-side statistics per language.
    Asymmetry {
        #[arg(long)]
        matrix: PathBuf,
    },
    /// Benchmark BLEU minus out-of-benchmark control BLEU.
    ControlGap {
        /// SRC-TGT (default: the control bitext's direction).
        #[arg(long)]
        direction: Option<String>,
        /// Take the benchmark score from this matrix instead of translating.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, requires = "control_bleu")]
        bench_bleu: Option<f64>,
        #[arg(long, requires = "bench_bleu")]
        control_bleu: Option<f64>,
    },
    /// Recall probe on sources back-translated from a pivot language.
    ProbeBacktranslate {
        #[arg(long)]
        pivot: String,
        #[arg(long, value_delimiter = ',', default_value = "eng")]
        bases: Vec<String>,
        /// Default: every language except the base.
        #[arg(long, value_delimiter = ',')]
        targets: Vec<String>,
    },
    /// Recall probe on same-language paraphrases.
    ProbeParaphrase {
        #[arg(long, value_delimiter = ',', default_value = "eng")]
        bases: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        targets: Vec<String>,
    },
    /// Named-entity replacement probe.
    ProbeEntities {
        #[arg(long, value_delimiter = ',')]
        sources: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        targets: Vec<String>,
        /// Reuse a saved inventory instead of building one.
        #[arg(long)]
        inventory: Option<PathBuf>,
    },
    /// Distribution of sentence BLEU for one direction.
    MemoProfile {
        #[arg(long)]
        direction: String,
        /// Score these hypotheses instead of translating.
        #[arg(long)]
        hyps: Option<PathBuf>,
    },
    /// Export pivot↔x fine-tuning data and the training config.
    FtExport {
        #[arg(long, default_value = "eng")]
        pivot: String,
    },
    /// Base against fine-tuned matrix differences.
    FtDiff {
        base: PathBuf,
        tuned: PathBuf,
        #[arg(long, default_value = "eng")]
        pivot: String,
        /// Symmetric colour range limit for the diff heatmaps.
        #[arg(long)]
        limit: Option<f64>,
    },
    /// CSV and SVG heatmap for a matrix.
    Render {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, value_enum, default_value = "bleu")]
        metric: MetricArg,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum MetricArg {
    Bleu,
    Semantic,
}

fn model_overlay(base: &mut ModelConfig, stub: &Option<String>, endpoint: &Option<String>, model: &Option<String>) {
    if let Some(s) = stub {
        base.stub = Some(s.clone());
        base.endpoint = None;
    }
    if let Some(e) = endpoint {
        base.endpoint = Some(e.clone());
        base.stub = None;
    }
    if let Some(m) = model {
        base.model = Some(m.clone());
    }
}

fn build_config(c: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if c.corpus.is_some() {
        cfg.corpus.root = c.corpus.clone();
    }
    if c.split.is_some() {
        cfg.corpus.split = c.split.clone();
    }
    if c.control_src.is_some() {
        cfg.corpus.control_src = c.control_src.clone();
    }
    if c.control_tgt.is_some() {
        cfg.corpus.control_tgt = c.control_tgt.clone();
    }
    if c.ner.is_some() {
        cfg.corpus.ner = c.ner.clone();
    }
    if let Some(l) = &c.langs {
        cfg.languages = l.clone();
    }
    for t in &c.tokenizers {
        let (lang, id) = t
            .split_once('=')
            .ok_or_else(|| Usage(format!("--tokenizer {t:?}: expected LANG=ID")))?;
        let lang = mtcontam::corpus::LangCode::resolve(lang).map_err(|e| Usage(format!("--tokenizer: {e}")))?;
        let id = id.parse().map_err(|e| Usage(format!("--tokenizer: {e}")))?;
        cfg.tokenizers.overrides.insert(lang, id);
    }
    model_overlay(&mut cfg.model, &c.stub, &c.endpoint, &c.model);
    if c.completion {
        cfg.model.completion = true;
    }
    if c.helper_stub.is_some() || c.helper_endpoint.is_some() || c.helper_model.is_some() {
        let mut h = cfg.helper.take().unwrap_or_default();
        model_overlay(&mut h, &c.helper_stub, &c.helper_endpoint, &c.helper_model);
        cfg.helper = Some(h);
    }
    if c.scorer.is_some() {
        cfg.scorer = c.scorer.clone();
    }
    if let Some(t) = c.temperature {
        cfg.params.temperature = t;
    }
    if let Some(m) = c.max_new_tokens {
        cfg.params.max_new_tokens = m;
    }
    if let Some(k) = c.parallelism {
        cfg.parallelism = k;
    }
    if c.cache_dir.is_some() {
        cfg.cache_dir = c.cache_dir.clone();
    }
    if let Some(o) = &c.output_dir {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(64),
            };
        }
    };
    let result = build_config(&cli.common).and_then(|cfg| {
        let run_id = cli.common.run_id.clone().unwrap_or_else(|| format!("run-{}", commands::now_unix()));
        let run = commands::Run {
            cfg,
            run_id,
            dry_run: cli.common.dry_run,
        };
        run.execute(&cli.cmd)
    });
    match result {
        Ok(commands::Outcome::Complete) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(64)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
