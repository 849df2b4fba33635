use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use mtcontam::adapter::Adapter;
use mtcontam::corpus::{read_segments, Direction, LangCode, MultiwayCorpus};
use mtcontam::ftsim::{cross_direction_summary, emit_config, export_pairs, FinetunePlan};
use mtcontam::metrics::{corpus_bleu, TokenizerId};
use mtcontam::perturb::{backtranslate, build_inventory, load_ner, paraphrase, EntityInventory, PerturbedSource};
use mtcontam::probes::{
    asymmetry, classify, control_gap, control_gap_values, entity_probe, eval_control, eval_matrix,
    memorization_profile, plan, recall_probe, score_items, ControlGap, ScoreMatrix,
};
use mtcontam::report::{diff_heatmap, heatmap_svg, matrix_csv, HeatmapSpec, Metric, Report};
use mtcontam::toy;

use crate::config::{parse_direction, resolve_lang, RunConfig};
use crate::{Cmd, MetricArg, Usage};

pub enum Outcome {
    Complete,
    Partial,
}

impl Outcome {
    fn from_failures(n: usize) -> Self {
        if n > 0 {
            log::warn!("{n} items failed; see the report");
            Outcome::Partial
        } else {
            Outcome::Complete
        }
    }
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub struct Run {
    pub cfg: RunConfig,
    pub run_id: String,
    pub dry_run: bool,
}

/// Files of one subcommand invocation.
struct Out<'a> {
    run: &'a Run,
    command: &'static str,
    dir: PathBuf,
    extra_meta: BTreeMap<String, Value>,
}

impl Out<'_> {
    fn meta(&self) -> Value {
        let mut meta = json!({
            "run_id": self.run.run_id,
            "command": self.command,
            "created_unix": now_unix(),
            "tool_version": env!("CARGO_PKG_VERSION"),
            "config": self.run.cfg,
        });
        for (k, v) in &self.extra_meta {
            meta[k] = v.clone();
        }
        meta
    }

    fn note_adapter(&mut self, key: &str, a: &Adapter) {
        self.extra_meta.insert(
            key.into(),
            json!({"model_id": a.model_id(), "backend_calls": a.backend_calls(), "cache_hits": a.cache_hits()}),
        );
    }

    fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let path = self.dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    fn write_report<T: Serialize>(&self, name: &str, payload: &T) -> Result<PathBuf> {
        let report = Report::new(self.meta(), payload);
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    fn write_heatmap(&self, name: &str, spec: &HeatmapSpec) -> Result<PathBuf> {
        self.write_text(name, &heatmap_svg(spec)?)
    }

    /// CSV and heatmap for one metric; skipped when the metric is absent.
    fn write_matrix_views(&self, matrix: &ScoreMatrix, metric: Metric) -> Result<()> {
        let name = metric_name(metric);
        if metric == Metric::Semantic && matrix.cells.iter().all(|c| c.semantic.is_none()) {
            return Ok(());
        }
        self.write_text(&format!("matrix_{name}.csv"), &matrix_csv(matrix, metric))?;
        let title = format!("{} {} ({})", matrix.meta.model_id, name, matrix.meta.corpus_id);
        self.write_heatmap(&format!("heatmap_{name}.svg"), &HeatmapSpec::from_matrix(matrix, metric, title))?;
        Ok(())
    }
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::Bleu => "bleu",
        Metric::Semantic => "semantic",
    }
}

fn planned(n: u64) -> Result<Outcome> {
    println!("planned adapter calls: {n}");
    Ok(Outcome::Complete)
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// A report envelope's payload, or the document itself.
fn payload(v: Value) -> Value {
    match v {
        Value::Object(mut m) if m.contains_key("payload") && m.contains_key("schema_version") => {
            m.remove("payload").unwrap_or(Value::Null)
        }
        other => other,
    }
}

pub fn read_matrix(path: &Path) -> Result<ScoreMatrix> {
    serde_json::from_value(payload(read_json(path)?)).with_context(|| format!("{} is not a score matrix", path.display()))
}

/// Control BLEU by direction from a control-gap report or a plain map.
fn read_controls(path: &Path) -> Result<BTreeMap<Direction, f64>> {
    let v = payload(read_json(path)?);
    if let Some(gaps) = v.get("gaps") {
        let gaps: Vec<ControlGap> = serde_json::from_value(gaps.clone())?;
        return Ok(gaps.into_iter().map(|g| (g.direction, g.control_bleu)).collect());
    }
    let map: BTreeMap<String, f64> =
        serde_json::from_value(v).with_context(|| format!("{}: expected a control-gap report or {{\"src-tgt\": bleu}}", path.display()))?;
    map.into_iter()
        .map(|(k, b)| Ok((parse_direction_free(&k)?, b)))
        .collect()
}

/// `src-tgt` without a corpus to resolve against.
fn parse_direction_free(text: &str) -> Result<Direction> {
    let (s, t) = text
        .split_once('-')
        .ok_or_else(|| Usage(format!("direction {text:?}: expected SRC-TGT")))?;
    let r = |c: &str| LangCode::resolve(c).map_err(|e| Usage(format!("direction {text:?}: {e}")));
    Ok(Direction::new(r(s)?, r(t)?))
}

fn targets_for(cfg: &RunConfig, corpus: &MultiwayCorpus, codes: &[String]) -> Result<Vec<LangCode>> {
    cfg.resolve_in(corpus, codes)
}

impl Run {
    fn out(&self, command: &'static str) -> Out<'_> {
        Out {
            run: self,
            command,
            dir: self.cfg.output_dir.join(&self.run_id),
            extra_meta: BTreeMap::new(),
        }
    }

    pub fn execute(&self, cmd: &Cmd) -> Result<Outcome> {
        match cmd {
            Cmd::EvalMatrix => self.eval_matrix(),
            Cmd::Classify { matrix, controls } => self.classify(matrix, controls.as_deref()),
            Cmd::Asymmetry { matrix } => self.asymmetry(matrix),
            Cmd::ControlGap {
                direction,
                matrix,
                bench_bleu,
                control_bleu,
            } => self.control_gap(direction.as_deref(), matrix.as_deref(), bench_bleu.zip(*control_bleu)),
            Cmd::ProbeBacktranslate { pivot, bases, targets } => self.recall(Some(pivot), bases, targets),
            Cmd::ProbeParaphrase { bases, targets } => self.recall(None, bases, targets),
            Cmd::ProbeEntities {
                sources,
                targets,
                inventory,
            } => self.entities(sources, targets, inventory.as_deref()),
            Cmd::MemoProfile { direction, hyps } => self.memo_profile(direction, hyps.as_deref()),
            Cmd::FtExport { pivot } => self.ft_export(pivot),
            Cmd::FtDiff {
                base,
                tuned,
                pivot,
                limit,
            } => self.ft_diff(base, tuned, pivot, *limit),
            Cmd::Render { matrix, metric } => self.render(matrix, *metric),
        }
    }

    fn corpus(&self) -> Result<(Arc<MultiwayCorpus>, String)> {
        let (c, id) = self.cfg.load_corpus()?;
        Ok((Arc::new(c), id))
    }

    fn eval_matrix(&self) -> Result<Outcome> {
        let (corpus, corpus_id) = self.corpus()?;
        let langs = corpus.languages().to_vec();
        if self.dry_run {
            return planned(plan::eval_matrix(langs.len(), corpus.len()));
        }
        let adapter = self.cfg.adapter(&self.cfg.model, &corpus, |s| s)?;
        let scorer = self.cfg.scorer()?;
        let matrix = eval_matrix(
            &corpus,
            &langs,
            &adapter,
            &self.cfg.params,
            &self.cfg.tokenizers,
            scorer.as_deref(),
            &corpus_id,
        )?;
        let mut out = self.out("eval-matrix");
        out.note_adapter("model", &adapter);
        out.write_report("matrix.json", &matrix)?;
        out.write_matrix_views(&matrix, Metric::Bleu)?;
        out.write_matrix_views(&matrix, Metric::Semantic)?;
        let verdicts = classify(&matrix, &self.cfg.thresholds, &BTreeMap::new());
        out.write_report(
            "verdicts.json",
            &json!({"thresholds": self.cfg.thresholds, "verdicts": verdicts}),
        )?;
        Ok(Outcome::from_failures(matrix.total_failures()))
    }

    fn classify(&self, matrix: &Path, controls: Option<&Path>) -> Result<Outcome> {
        if self.dry_run {
            return planned(0);
        }
        let matrix = read_matrix(matrix)?;
        let controls = controls.map(read_controls).transpose()?.unwrap_or_default();
        let verdicts = classify(&matrix, &self.cfg.thresholds, &controls);
        let controls: BTreeMap<String, f64> = controls.iter().map(|(d, b)| (d.to_string(), *b)).collect();
        self.out("classify").write_report(
            "verdicts.json",
            &json!({"thresholds": self.cfg.thresholds, "controls": controls, "verdicts": verdicts}),
        )?;
        Ok(Outcome::Complete)
    }

    fn asymmetry(&self, matrix: &Path) -> Result<Outcome> {
        if self.dry_run {
            return planned(0);
        }
        let report = asymmetry(&read_matrix(matrix)?, &self.cfg.thresholds)?;
        self.out("asymmetry").write_report("asymmetry.json", &report)?;
        Ok(Outcome::Complete)
    }

    fn control_gap(&self, direction: Option<&str>, matrix: Option<&Path>, values: Option<(f64, f64)>) -> Result<Outcome> {
        let t_gap = self.cfg.thresholds.gap;
        if let Some((bench, control)) = values {
            if self.dry_run {
                return planned(0);
            }
            let direction = parse_direction_free(direction.ok_or_else(|| Usage("--direction is required with --bench-bleu".into()))?)?;
            let (gap, flagged) = control_gap_values(bench, control, t_gap);
            let g = ControlGap {
                direction,
                bench_bleu: bench,
                control_bleu: control,
                gap,
                flagged,
            };
            self.out("control-gap").write_report("control_gap.json", &json!({"t_gap": t_gap, "gaps": [g]}))?;
            return Ok(Outcome::Complete);
        }
        let (corpus, _) = self.corpus()?;
        let bitext = self.cfg.control(&corpus, direction)?;
        let dir = bitext.direction();
        let dir = Direction::new(corpus.language(&dir.src)?.clone(), corpus.language(&dir.tgt)?.clone());
        if let Some(d) = direction {
            let (s, t) = parse_direction(&corpus, d)?;
            if Direction::new(s, t) != dir {
                return Err(Usage(format!("--direction {d} does not match the control bitext ({dir})")).into());
            }
        }
        if self.dry_run {
            let bench_calls = if matrix.is_some() { 0 } else { corpus.len() };
            return planned((bitext.len() + bench_calls) as u64);
        }
        let adapter = self.cfg.adapter(&self.cfg.model, &corpus, |s| s)?;
        let bench = match matrix {
            Some(p) => read_matrix(p)?
                .get(&dir)
                .cloned()
                .ok_or_else(|| Usage(format!("{} has no {dir} cell", p.display())))?,
            None => {
                let batch = adapter.translate_batch(&corpus, &dir, &self.cfg.params)?;
                let by_id = |l: &LangCode| -> Result<BTreeMap<u64, &str>> {
                    Ok(corpus.ids().iter().copied().zip(corpus.segments(l)?.iter().map(String::as_str)).collect())
                };
                let tok = self.cfg.tokenizers.for_lang(&dir.tgt);
                score_items(dir.clone(), &batch, &by_id(&dir.src)?, &by_id(&dir.tgt)?, tok, None)?
            }
        };
        let mut control = eval_control(&bitext, &adapter, &self.cfg.params, &self.cfg.tokenizers, None)?;
        control.direction = dir.clone();
        let gap = control_gap(&bench, &control, &self.cfg.thresholds)?;
        let mut out = self.out("control-gap");
        out.note_adapter("model", &adapter);
        out.write_report(
            "control_gap.json",
            &json!({"t_gap": t_gap, "gaps": [gap], "benchmark": bench, "control": control}),
        )?;
        Ok(Outcome::from_failures(bench.failures + control.failures))
    }

    fn recall(&self, pivot: Option<&String>, bases: &[String], targets: &[String]) -> Result<Outcome> {
        let (corpus, _) = self.corpus()?;
        let bases = self.cfg.resolve_in(&corpus, bases)?;
        let pivot = pivot.map(|p| resolve_lang(&corpus, p)).transpose()?;
        let all_targets = targets_for(&self.cfg, &corpus, targets)?;
        let per_base = |b: &LangCode| all_targets.iter().filter(|t| *t != b).count();
        if self.dry_run {
            let n: u64 = bases.iter().map(|b| plan::recall(1, per_base(b), corpus.len())).sum();
            return planned(n);
        }
        let helper = self.cfg.adapter(self.cfg.helper_model(), &corpus, |s| s)?;
        let adapter = self.cfg.adapter(&self.cfg.model, &corpus, |s| s)?;
        let (command, file, perturbed) = match &pivot {
            Some(p) => (
                "probe-backtranslate",
                "recall_backtranslate.json",
                backtranslate(&corpus, p, &bases, &helper, &self.cfg.params)?,
            ),
            None => (
                "probe-paraphrase",
                "recall_paraphrase.json",
                paraphrase(&corpus, &bases, &helper, &self.cfg.params)?,
            ),
        };
        let mut results = Vec::new();
        let mut failures = 0;
        for base in &bases {
            let source = &perturbed[base];
            for t in all_targets.iter().filter(|t| *t != base) {
                let r = recall_probe(source, t, &corpus, &adapter, &self.cfg.params, &self.cfg.tokenizers, &self.cfg.thresholds)?;
                log::info!(
                    "{} {}: output {:.2}, similarity {:.2}, flag {}",
                    r.source,
                    r.direction,
                    r.output_bleu,
                    r.similarity_bleu,
                    r.recall_flag
                );
                failures += r.failures;
                results.push(r);
            }
        }
        let sources: Vec<&PerturbedSource> = perturbed.values().collect();
        let mut out = self.out(command);
        out.note_adapter("helper", &helper);
        out.note_adapter("model", &adapter);
        out.write_report(
            file,
            &json!({
                "sim_low": self.cfg.thresholds.sim_low,
                "recall_high": self.cfg.thresholds.recall_high,
                "sources": sources,
                "results": results,
            }),
        )?;
        Ok(Outcome::from_failures(failures))
    }

    fn entities(&self, sources: &[String], targets: &[String], inventory: Option<&Path>) -> Result<Outcome> {
        let (corpus, _) = self.corpus()?;
        let english = resolve_lang(&corpus, "eng")?;
        let sources = self.cfg.resolve_in(&corpus, sources)?;
        let targets = self.cfg.resolve_in(&corpus, targets)?;
        let saved = inventory
            .map(|p| -> Result<EntityInventory> { Ok(EntityInventory::from_json(&payload(read_json(p)?), english.clone())?) })
            .transpose()?;
        let spans = match (&saved, &self.cfg.corpus.ner) {
            (Some(_), _) => None,
            (None, Some(p)) => Some(load_ner(p, &corpus, &english)?),
            (None, None) if self.cfg.uses_toy() => Some(toy::ner()),
            (None, None) => return Err(Usage("--ner or --inventory is required with --corpus".into()).into()),
        };
        let n_dirs = sources.iter().map(|s| targets.iter().filter(|t| *t != s).count()).sum();
        if self.dry_run {
            let (inv_calls, n_sent) = match (&saved, &spans) {
                (Some(inv), _) => (0, inv.entries.len()),
                (None, Some(spans)) => {
                    let counts: Vec<usize> = spans.values().map(Vec::len).collect();
                    let n_other = corpus.languages().iter().filter(|l| **l != english).count();
                    (plan::inventory(&counts, n_other), counts.iter().filter(|&&k| k > 0).count())
                }
                (None, None) => unreachable!(),
            };
            return planned(inv_calls + plan::entity_probe(n_dirs, n_sent));
        }
        let mut out = self.out("probe-entities");
        let inv = match saved {
            Some(inv) => inv,
            None => {
                let helper = self.cfg.adapter(self.cfg.helper_model(), &corpus, |s| s)?;
                let inv = build_inventory(
                    &corpus,
                    &english,
                    spans.as_ref().expect("spans loaded"),
                    corpus.languages(),
                    &helper,
                    &self.cfg.params,
                )?;
                out.note_adapter("helper", &helper);
                inv
            }
        };
        let surfaces = inv.surfaces();
        let adapter = self.cfg.adapter(&self.cfg.model, &corpus, |s| s.with_entity_surfaces(surfaces))?;
        let report = entity_probe(
            &corpus,
            &inv,
            &sources,
            &targets,
            &adapter,
            &self.cfg.params,
            &self.cfg.tokenizers,
            self.cfg.seed,
        )?;
        out.note_adapter("model", &adapter);
        out.write_report("inventory.json", &json!({"excluded": inv.excluded, "inventory": inv.to_json()}))?;
        out.write_report("entity_probe.json", &report)?;
        Ok(Outcome::from_failures(inv.excluded.len() + report.skipped.len()))
    }

    fn memo_profile(&self, direction: &str, hyps: Option<&Path>) -> Result<Outcome> {
        let (corpus, _) = self.corpus()?;
        let (src, tgt) = parse_direction(&corpus, direction)?;
        let dir = Direction::new(src, tgt.clone());
        if self.dry_run {
            return planned(if hyps.is_some() { 0 } else { corpus.len() as u64 });
        }
        let tok: TokenizerId = self.cfg.tokenizers.for_lang(&tgt);
        let refs_all = corpus.segments(&tgt)?;
        let mut out = self.out("memo-profile");
        let (h, r, failures): (Vec<String>, Vec<String>, usize) = match hyps {
            Some(p) => {
                let h = read_segments(p)?;
                (h, refs_all.to_vec(), 0)
            }
            None => {
                let adapter = self.cfg.adapter(&self.cfg.model, &corpus, |s| s)?;
                let batch = adapter.translate_batch(&corpus, &dir, &self.cfg.params)?;
                out.note_adapter("model", &adapter);
                let mut h = Vec::new();
                let mut r = Vec::new();
                for (id, hyp) in batch.succeeded() {
                    h.push(hyp.to_string());
                    r.push(corpus.segment(&tgt, id)?.to_string());
                }
                (h, r, batch.failed())
            }
        };
        let profile = memorization_profile(&h, &r, tok, self.cfg.thresholds.memorized_sentence_bleu)?;
        let bleu = corpus_bleu(&h, &r, tok)?;
        out.write_report(
            "memo_profile.json",
            &json!({"direction": dir, "corpus_bleu": bleu.score, "tokenizer": tok, "profile": profile}),
        )?;
        Ok(Outcome::from_failures(failures))
    }

    fn ft_export(&self, pivot: &str) -> Result<Outcome> {
        let (corpus, _) = self.corpus()?;
        let pivot = resolve_lang(&corpus, pivot)?;
        let plan = FinetunePlan::new(pivot, corpus.languages().to_vec())?;
        if self.dry_run {
            return planned(0);
        }
        let out = self.out("ft-export");
        fs::create_dir_all(&out.dir)?;
        let train = out.dir.join("train.jsonl");
        let mut w = std::io::BufWriter::new(fs::File::create(&train).with_context(|| format!("creating {}", train.display()))?);
        let n = export_pairs(&corpus, &plan, &mut w)?;
        std::io::Write::flush(&mut w)?;
        log::info!("wrote {n} records to {}", train.display());
        out.write_text("config.yml", &emit_config(&plan))?;
        out.write_report(
            "plan.json",
            &json!({"plan": plan, "records": n, "seen": plan.seen(), "unseen": plan.unseen()}),
        )?;
        Ok(Outcome::Complete)
    }

    fn ft_diff(&self, base: &Path, tuned: &Path, pivot: &str, limit: Option<f64>) -> Result<Outcome> {
        if self.dry_run {
            return planned(0);
        }
        let base = read_matrix(base)?;
        let tuned = read_matrix(tuned)?;
        let want = LangCode::resolve(pivot).map_err(|e| Usage(format!("--pivot: {e}")))?;
        let pivot = base
            .languages
            .iter()
            .find(|l| **l == want || (want.script().is_none() && l.iso3() == want.iso3()))
            .cloned()
            .ok_or_else(|| Usage(format!("--pivot {pivot} is not a matrix language")))?;
        let plan = FinetunePlan::new(pivot, base.languages.clone())?;
        let summary = cross_direction_summary(&base, &tuned, &plan)?;
        let out = self.out("ft-diff");
        out.write_report("ft_diff.json", &summary)?;
        for metric in [Metric::Bleu, Metric::Semantic] {
            let spec = diff_heatmap(&base, &tuned, metric, limit, format!("{} difference (tuned - base)", metric_name(metric)))?;
            if metric == Metric::Semantic && spec.values.iter().flatten().all(Option::is_none) {
                continue;
            }
            out.write_heatmap(&format!("diff_{}.svg", metric_name(metric)), &spec)?;
        }
        Ok(Outcome::Complete)
    }

    fn render(&self, matrix: &Path, metric: MetricArg) -> Result<Outcome> {
        if self.dry_run {
            return planned(0);
        }
        let matrix = read_matrix(matrix)?;
        let metric = match metric {
            MetricArg::Bleu => Metric::Bleu,
            MetricArg::Semantic => Metric::Semantic,
        };
        self.out("render").write_matrix_views(&matrix, metric)?;
        Ok(Outcome::Complete)
    }
}
