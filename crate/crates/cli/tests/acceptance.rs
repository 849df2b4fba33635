//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach stdout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use serde_json::Value;

use mtcontam::adapter::{Adapter, DecodingParams, StubModel};
use mtcontam::corpus::{LangCode, MultiwayCorpus};
use mtcontam::ftsim::{cross_direction_summary, FinetunePlan};
use mtcontam::metrics::{corpus_bleu, corpus_stats, OverlapScorer, TokenizerId, MAX_ORDER};
use mtcontam::perturb::{backtranslate, build_inventory, replace_sources, ReplacementSetting};
use mtcontam::probes::{
    asymmetry, classify, control_gap_values, entity_probe, eval_matrix, recall_probe, ScoreMatrix, Thresholds,
    TokenizerMap, VerdictClass,
};
use mtcontam::rng::SplitMix64;
use mtcontam::toy;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn lang(c: &str) -> LangCode {
    LangCode::resolve(c).unwrap()
}

fn stub_adapter(spec: &str, corpus: &Arc<MultiwayCorpus>) -> Adapter {
    Adapter::new(Arc::new(StubModel::new(spec.parse().unwrap(), corpus.clone())))
}

fn toy_matrix(spec: &str) -> ScoreMatrix {
    let c = Arc::new(toy::corpus());
    let a = stub_adapter(spec, &c);
    let scorer = OverlapScorer::default();
    eval_matrix(
        &c,
        c.languages(),
        &a,
        &DecodingParams::default(),
        &TokenizerMap::default(),
        Some(&scorer),
        toy::CORPUS_ID,
    )
    .unwrap()
}

// ---------------------------------------------------------------- BLEU

fn bleu_conformance() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/bleu");
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    let fixtures: Vec<Value> = paths
        .iter()
        .map(|p| serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap())
        .collect();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for f in &fixtures {
        let strs = |k: &str| -> Vec<String> {
            f[k].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect()
        };
        let tok: TokenizerId = f["tokenizer"].as_str().unwrap().parse().unwrap();
        let s = corpus_bleu(&strs("hyps"), &strs("refs"), tok).map_err(|e| e.to_string())?;
        worst = worst.max((s.score - f["expected_score"].as_f64().unwrap()).abs());
        worst = worst.max((s.brevity_penalty - f["expected_bp"].as_f64().unwrap()).abs());
        for n in 0..MAX_ORDER {
            worst = worst.max((s.precisions[n] - f["expected_precisions"][n].as_f64().unwrap()).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        fixtures.len() >= 12 && worst <= 1e-4 && secs < 1.0,
        format!("{} fixtures, max |diff| {worst:.2e}, {secs:.3}s", fixtures.len()),
        format!("{} fixtures, max |diff| {worst:.2e} (tol 1e-4), {secs:.3}s", fixtures.len()),
    )
}

fn brute_force(hyp: &[String], reference: &[String], matches: &mut [u64; 4], totals: &mut [u64; 4]) {
    for n in 1..=MAX_ORDER {
        for i in 0..(hyp.len() + 1).saturating_sub(n) {
            let gram = &hyp[i..i + n];
            totals[n - 1] += 1;
            let earlier = (0..i).filter(|&j| &hyp[j..j + n] == gram).count();
            let in_ref = (0..(reference.len() + 1).saturating_sub(n))
                .filter(|&j| &reference[j..j + n] == gram)
                .count();
            if earlier < in_ref {
                matches[n - 1] += 1;
            }
        }
    }
}

fn oracle_equivalence() -> Outcome {
    const VOCAB: [&str; 5] = ["a", "b", "c", "d", "e"];
    let mut rng = SplitMix64::new(20240917);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..200 {
        let n_sent = 1 + rng.below(5) as usize;
        let mut seg = || -> Vec<String> {
            let len = rng.below(13) as usize;
            (0..len).map(|_| VOCAB[rng.below(5) as usize].to_string()).collect()
        };
        let pairs: Vec<(Vec<String>, Vec<String>)> = (0..n_sent).map(|_| (seg(), seg())).collect();
        let hyps: Vec<String> = pairs.iter().map(|p| p.0.join(" ")).collect();
        let refs: Vec<String> = pairs.iter().map(|p| p.1.join(" ")).collect();
        let stats = corpus_stats(&hyps, &refs, TokenizerId::None).map_err(|e| e.to_string())?;
        let (mut m, mut t) = ([0; 4], [0; 4]);
        for (h, r) in &pairs {
            brute_force(h, r, &mut m, &mut t);
        }
        if stats.matches != m || stats.totals != t {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        mismatches == 0 && secs < 10.0,
        format!("200 corpora, 0 mismatches, {secs:.3}s"),
        format!("{mismatches} mismatching corpora, {secs:.3}s"),
    )
}

// ---------------------------------------------------------------- probes

fn soundness(bin: &Path, work: &Path) -> Outcome {
    let t = Thresholds::default();
    let mut problems = Vec::new();
    for l in toy::languages() {
        let m = toy_matrix(&format!("memorizer:exact:{l}"));
        for c in &m.cells {
            if c.direction.tgt == l && c.bleu_score().is_none_or(|b| b < 100.0 - 1e-9) {
                problems.push(format!("{} bleu {:?}", c.direction, c.bleu_score()));
            }
        }
        for v in classify(&m, &t, &BTreeMap::new()) {
            let flagged = v.class == VerdictClass::Contaminated;
            if flagged != (v.direction.tgt == l) {
                problems.push(format!("memorizer {l}: {} flagged={flagged}", v.direction));
            }
        }
    }
    let echo_flags = classify(&toy_matrix("echo"), &t, &BTreeMap::new())
        .iter()
        .filter(|v| v.class == VerdictClass::Contaminated)
        .count();
    if echo_flags > 0 {
        problems.push(format!("echo stub: {echo_flags} flags"));
    }
    // The same through the binary.
    let out = work.join("sound");
    let code = run_cli(bin, &out, "s1", &["eval-matrix", "--stub", "memorizer:exact:tam"]);
    let code2 = run_cli(
        bin,
        &out,
        "s1",
        &["classify", "--matrix", out.join("s1/matrix.json").to_str().unwrap()],
    );
    let verdicts = payload(&out.join("s1/verdicts.json"));
    let flagged: Vec<String> = verdicts["verdicts"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|v| v["class"] == "contaminated")
        .map(|v| v["direction"]["tgt"].as_str().unwrap().to_string())
        .collect();
    if code != 0 || code2 != 0 || flagged.len() != 7 || flagged.iter().any(|t| t != "tam_Taml") {
        problems.push(format!("cli: exit {code}/{code2}, flagged targets {flagged:?}"));
    }
    check(
        problems.is_empty(),
        "8 memorized targets x 56 cells and echo: 0 false positives, 0 false negatives".into(),
        problems.join("; "),
    )
}

fn control_gap_rule() -> Outcome {
    let t = Thresholds::default().gap;
    let cases = [(87.55, 0.11, true), (75.44, 0.12, true), (69.21, 1.85, true), (40.0, 38.0, false)];
    let mut bad = Vec::new();
    for (b, c, want) in cases {
        let (gap, flag) = control_gap_values(b, c, t);
        if flag != want {
            bad.push(format!("({b}, {c}) gap {gap} flag {flag}"));
        }
    }
    check(
        bad.is_empty(),
        "eng-tam 87.55/0.11, eng-mal 75.44/0.12, eng-ory 69.21/1.85 flagged; 40/38 not".into(),
        bad.join("; "),
    )
}

fn target_asymmetry() -> Outcome {
    let t = Thresholds::default();
    let memo = asymmetry(&toy_matrix("memorizer:exact:tam"), &t).map_err(|e| e.to_string())?;
    let tam = memo.languages.iter().find(|l| l.lang == lang("tam")).unwrap();
    let sym = asymmetry(&toy_matrix("echo"), &t).map_err(|e| e.to_string())?;
    let worst = sym
        .languages
        .iter()
        .map(|l| l.target_memorization_score.abs())
        .fold(0.0, f64::max);
    check(
        memo.ranking[0] == tam.lang && tam.target_memorization_score >= 50.0 && worst < 5.0,
        format!(
            "tam ranked first with score {:.2}; echo max |score| {worst:.2}",
            tam.target_memorization_score
        ),
        format!(
            "ranking {:?}, tam score {:.2}, echo max |score| {worst:.2}",
            memo.ranking, tam.target_memorization_score
        ),
    )
}

fn recall_once() -> Result<Vec<(String, f64, f64, bool)>, String> {
    let c = Arc::new(toy::corpus());
    let p = DecodingParams::default();
    let helper = stub_adapter("noise:7:0.3", &c);
    let bt = backtranslate(&c, &lang("por"), &[lang("eng")], &helper, &p).map_err(|e| e.to_string())?;
    let src = &bt[&lang("eng")];
    let mut rows = Vec::new();
    for spec in ["memorizer:id:all", "memorizer:exact:all"] {
        let a = stub_adapter(spec, &c);
        let r = recall_probe(src, &lang("tam"), &c, &a, &p, &TokenizerMap::default(), &Thresholds::default())
            .map_err(|e| e.to_string())?;
        rows.push((spec.to_string(), r.similarity_bleu, r.output_bleu, r.recall_flag));
    }
    Ok(rows)
}

fn recall_despite_divergence() -> Outcome {
    let a = recall_once()?;
    let b = recall_once()?;
    let (_, sim, out_id, flag_id) = a[0].clone();
    let (_, _, out_exact, flag_exact) = a[1].clone();
    check(
        a == b && sim < 20.0 && out_id >= 100.0 - 1e-9 && flag_id && !flag_exact,
        format!(
            "similarity {sim:.2}; id-keyed output {out_id:.2} flag true; exact-source output {out_exact:.2} flag false; repeat identical"
        ),
        format!("{a:?} vs repeat {b:?}"),
    )
}

fn entity_monotonicity() -> Outcome {
    let c = Arc::new(toy::corpus());
    let p = DecodingParams::default();
    let langs = toy::languages();
    let helper = stub_adapter("noise:7", &c);
    let inv = build_inventory(&c, &toy::english(), &toy::ner(), &langs, &helper, &p).map_err(|e| e.to_string())?;
    let model = Adapter::new(Arc::new(
        StubModel::new("memorizer:entity:all".parse().unwrap(), c.clone()).with_entity_surfaces(inv.surfaces()),
    ));
    let seed = 11;
    let reports: Vec<_> = (0..3)
        .map(|_| entity_probe(&c, &inv, &langs, &langs, &model, &p, &TokenizerMap::default(), seed))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let rep = &reports[0];
    let mut bad: Vec<String> = rep
        .rows
        .iter()
        .filter(|r| !(r.bleu_base >= r.bleu_one && r.bleu_one >= r.bleu_all && r.drop_all >= 20.0))
        .map(|r| format!("{} {:.2}/{:.2}/{:.2}", r.direction, r.bleu_base, r.bleu_one, r.bleu_all))
        .collect();
    if rep.rows.len() != langs.len() * (langs.len() - 1) || !rep.skipped.is_empty() {
        bad.push(format!("{} rows, {} skipped", rep.rows.len(), rep.skipped.len()));
    }
    let choices: Vec<_> = (0..3)
        .map(|_| {
            langs
                .iter()
                .map(|l| replace_sources(&c, &inv, l, ReplacementSetting::OneEntity { seed }).map(|s| s.segments))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    if choices[0] != choices[1] || choices[1] != choices[2] || reports[0] != reports[1] || reports[1] != reports[2] {
        bad.push("one-entity choice differs across runs".into());
    }
    let min_drop = rep.rows.iter().map(|r| r.drop_all).fold(f64::INFINITY, f64::min);
    check(
        bad.is_empty(),
        format!(
            "{} directions over {} sentences, base >= one >= all everywhere, min drop {min_drop:.2}; 3 runs identical",
            rep.rows.len(),
            rep.sentence_ids.len()
        ),
        bad.join("; "),
    )
}

fn ftsim_partition_and_diff() -> Outcome {
    let codes = ["eng", "fra", "spa", "por", "vie", "zho", "tam", "mal", "hin", "ben", "tel"];
    let langs: Vec<LangCode> = codes.iter().map(|c| lang(c)).collect();
    let plan = FinetunePlan::new(lang("eng"), langs).map_err(|e| e.to_string())?;
    let (seen, unseen) = (plan.seen().len(), plan.unseen().len());

    let a = toy_matrix("memorizer:exact:tam");
    let b = toy_matrix("echo");
    let toy_plan = FinetunePlan::new(toy::english(), a.languages.clone()).map_err(|e| e.to_string())?;
    let same = cross_direction_summary(&a, &a, &toy_plan).map_err(|e| e.to_string())?;
    let nonzero = same
        .seen
        .iter()
        .chain(&same.unseen)
        .filter(|d| d.delta_bleu != Some(0.0) || d.delta_semantic != Some(0.0))
        .count();
    let ab = cross_direction_summary(&a, &b, &toy_plan).map_err(|e| e.to_string())?;
    let ba = cross_direction_summary(&b, &a, &toy_plan).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (x, y) in ab.seen.iter().chain(&ab.unseen).zip(ba.seen.iter().chain(&ba.unseen)) {
        for (p, q) in [(x.delta_bleu, y.delta_bleu), (x.delta_semantic, y.delta_semantic)] {
            let (p, q) = (p.ok_or("missing delta")?, q.ok_or("missing delta")?);
            worst = worst.max((p + q).abs());
        }
    }
    check(
        seen == 20 && unseen == 90 && nonzero == 0 && worst <= 1e-9,
        format!("|seen| {seen}, |unseen| {unseen}; identical diff all zero; antisymmetry max {worst:.1e}"),
        format!("|seen| {seen}, |unseen| {unseen}, {nonzero} nonzero self-diff cells, antisymmetry {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- CLI

fn run_cli(bin: &Path, out: &Path, run_id: &str, args: &[&str]) -> i32 {
    let status = Command::new(bin)
        .args(args)
        .args(["--output-dir", out.to_str().unwrap(), "--run-id", run_id])
        .env("RUST_LOG", "error")
        .status()
        .expect("binary runs");
    status.code().unwrap_or(-1)
}

fn payload(path: &Path) -> Value {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["payload"].clone()
}

fn determinism(bin: &Path, work: &Path) -> Outcome {
    let out = work.join("det");
    let m = |run: &str| out.join(run).join("matrix.json").to_str().unwrap().to_string();
    let steps: Vec<(Vec<String>, Vec<&str>)> = vec![
        (vec!["eval-matrix".into(), "--stub".into(), "memorizer:exact:tam".into()], vec!["matrix.json", "verdicts.json"]),
        (vec!["control-gap".into(), "--stub".into(), "memorizer:exact:tam".into()], vec!["control_gap.json"]),
        (
            "probe-backtranslate --pivot por --bases eng --stub memorizer:id:all --helper-stub noise:7"
                .split(' ')
                .map(String::from)
                .collect(),
            vec!["recall_backtranslate.json"],
        ),
        (
            "probe-paraphrase --bases eng,fra --stub memorizer:exact:all --helper-stub noise:7"
                .split(' ')
                .map(String::from)
                .collect(),
            vec!["recall_paraphrase.json"],
        ),
        (
            "probe-entities --stub memorizer:entity:all --helper-stub noise:7 --seed 11"
                .split(' ')
                .map(String::from)
                .collect(),
            vec!["inventory.json", "entity_probe.json"],
        ),
        (
            "memo-profile --direction eng-tam --stub memorizer:exact:tam"
                .split(' ')
                .map(String::from)
                .collect(),
            vec!["memo_profile.json"],
        ),
    ];
    let mut bad = Vec::new();
    let mut compared = 0;
    for run in ["cold", "warm"] {
        for (args, _) in &steps {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let code = run_cli(bin, &out, run, &args);
            if code != 0 {
                bad.push(format!("{run} {}: exit {code}", args[0]));
            }
        }
        for extra in [
            vec!["classify", "--matrix", &m(run)],
            vec!["asymmetry", "--matrix", &m(run)],
            vec!["ft-diff", &m(run), &m(run)],
        ] {
            run_cli(bin, &out, run, &extra);
        }
    }
    let mut files: Vec<&str> = steps.iter().flat_map(|(_, f)| f.clone()).collect();
    files.extend(["asymmetry.json", "ft_diff.json"]);
    for f in files {
        let (a, b) = (payload(&out.join("cold").join(f)), payload(&out.join("warm").join(f)));
        compared += 1;
        if serde_json::to_string(&a).unwrap() != serde_json::to_string(&b).unwrap() {
            bad.push(format!("{f} payload differs"));
        }
    }
    let warm_meta: Value = serde_json::from_str(&std::fs::read_to_string(out.join("warm/matrix.json")).unwrap()).unwrap();
    if warm_meta["meta"]["model"]["backend_calls"] != 0 {
        bad.push(format!("warm run made {} backend calls", warm_meta["meta"]["model"]["backend_calls"]));
    }
    for svg in ["heatmap_bleu.svg", "heatmap_semantic.svg", "diff_bleu.svg"] {
        compared += 1;
        if std::fs::read(out.join("cold").join(svg)).ok() != std::fs::read(out.join("warm").join(svg)).ok() {
            bad.push(format!("{svg} differs"));
        }
    }
    check(
        bad.is_empty(),
        format!("{compared} artifacts byte-identical across cold and warm-cache runs; warm run made 0 backend calls"),
        bad.join("; "),
    )
}

fn live_endpoint(bin: &Path, work: &Path) -> Option<Outcome> {
    let url = std::env::var("MTCONTAM_LIVE_ENDPOINT").ok()?;
    let model = std::env::var("MTCONTAM_LIVE_MODEL").ok()?;
    let scorer = std::env::var("MTCONTAM_LIVE_SCORER").ok()?;
    let out = work.join("live");
    let code = run_cli(
        bin,
        &out,
        "live",
        &["eval-matrix", "--endpoint", &url, "--model", &model, "--scorer", &scorer, "--langs", "eng,fra,tam"],
    );
    let verdicts = out.join("live/verdicts.json");
    Some(check(
        code == 0 && verdicts.is_file(),
        "3-language matrix classified".into(),
        format!("exit {code}"),
    ))
}

fn main() {
    let bin = PathBuf::from(env!("CARGO_BIN_EXE_mtcontam"));
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    let criteria: Vec<Criterion> = vec![
        ("BLEU conformance", Box::new(bleu_conformance)),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("contamination detection soundness", Box::new(|| soundness(&bin, w))),
        ("control-gap rule", Box::new(control_gap_rule)),
        ("target-side asymmetry", Box::new(target_asymmetry)),
        ("recall despite divergence", Box::new(recall_despite_divergence)),
        ("entity-probe monotonicity", Box::new(entity_monotonicity)),
        ("ftsim partition and diff", Box::new(ftsim_partition_and_diff)),
        ("determinism suite", Box::new(|| determinism(&bin, w))),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    match live_endpoint(&bin, w) {
        Some(Ok(d)) => println!("PASS live endpoint: {d}"),
        Some(Err(d)) => println!("FAIL live endpoint (not gating): {d}"),
        None => println!(
            "SKIP live endpoint: set MTCONTAM_LIVE_ENDPOINT, MTCONTAM_LIVE_MODEL and MTCONTAM_LIVE_SCORER to run"
        ),
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
