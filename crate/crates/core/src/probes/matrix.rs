use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ProbeError, Thresholds, TokenizerMap};
use crate::adapter::{Adapter, BatchOutput, DecodingParams, TranslateItem};
use crate::corpus::{directions, Bitext, Direction, LangCode, MultiwayCorpus};
use crate::metrics::{corpus_bleu, semantic_score_batch, BleuScore, SemanticScorer, TokenizerId};

pub const MATRIX_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionScore {
    pub direction: Direction,
    /// Absent when the cell is invalid.
    pub bleu: Option<BleuScore>,
    /// Mean semantic score; `None` means no scorer result, never zero.
    pub semantic: Option<f64>,
    pub semantic_scorer: Option<String>,
    pub n_items: usize,
    pub failures: usize,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_reason: Option<String>,
}

impl DirectionScore {
    pub fn bleu_score(&self) -> Option<f64> {
        self.bleu.as_ref().filter(|_| self.valid).map(|b| b.score)
    }

    /// A valid cell from plain numbers, for feeding externally obtained
    /// scores to the classifier.
    pub fn from_values(direction: Direction, bleu: f64, semantic: Option<f64>, tok: TokenizerId) -> Self {
        Self {
            direction,
            bleu: Some(BleuScore {
                score: bleu,
                precisions: [0.0; 4],
                brevity_penalty: 1.0,
                hyp_len: 0,
                ref_len: 0,
                matches: [0; 4],
                totals: [0; 4],
                tokenizer: tok,
                all_empty_hypotheses: false,
            }),
            semantic,
            semantic_scorer: semantic.map(|_| "external".into()),
            n_items: 0,
            failures: 0,
            valid: true,
            invalid_reason: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub model_id: String,
    pub corpus_id: String,
    pub params: DecodingParams,
    pub tokenizers: TokenizerMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub schema_version: u32,
    pub meta: MatrixMeta,
    pub languages: Vec<LangCode>,
    /// One cell per ordered pair, row-major in language order.
    pub cells: Vec<DirectionScore>,
}

impl ScoreMatrix {
    pub fn get(&self, direction: &Direction) -> Option<&DirectionScore> {
        self.cells.iter().find(|c| c.direction == *direction)
    }

    pub fn bleu(&self, src: &LangCode, tgt: &LangCode) -> Option<f64> {
        self.get(&Direction::new(src.clone(), tgt.clone()))
            .and_then(DirectionScore::bleu_score)
    }

    pub fn semantic(&self, src: &LangCode, tgt: &LangCode) -> Option<f64> {
        self.get(&Direction::new(src.clone(), tgt.clone()))
            .filter(|c| c.valid)
            .and_then(|c| c.semantic)
    }

    /// Whether the cell set is exactly the ordered pairs of `languages`.
    pub fn is_complete(&self) -> bool {
        let Ok(dirs) = directions(&self.languages) else {
            return false;
        };
        dirs.len() == self.cells.len() && dirs.iter().all(|d| self.get(d).is_some())
    }

    pub fn total_failures(&self) -> usize {
        self.cells.iter().map(|c| c.failures).sum()
    }
}

/// Scores a finished batch against references. More than half of the
/// items failing makes the cell invalid.
pub fn score_items(
    direction: Direction,
    batch: &BatchOutput,
    sources: &BTreeMap<u64, &str>,
    references: &BTreeMap<u64, &str>,
    tok: TokenizerId,
    scorer: Option<&dyn SemanticScorer>,
) -> Result<DirectionScore, ProbeError> {
    let n = batch.ids.len();
    let failures = batch.failed();
    let mut cell = DirectionScore {
        direction,
        bleu: None,
        semantic: None,
        semantic_scorer: None,
        n_items: n,
        failures,
        valid: false,
        invalid_reason: None,
    };
    if n == 0 || failures * 2 > n {
        cell.invalid_reason = Some(format!("{failures} of {n} items failed"));
        return Ok(cell);
    }
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    let mut srcs = Vec::new();
    for (id, hyp) in batch.succeeded() {
        hyps.push(hyp.to_string());
        refs.push(references[&id].to_string());
        srcs.push(sources[&id].to_string());
    }
    cell.bleu = Some(corpus_bleu(&hyps, &refs, tok)?);
    cell.valid = true;
    if let Some(scorer) = scorer {
        match semantic_score_batch(&hyps, &refs, &srcs, scorer) {
            Ok(batch) => {
                cell.semantic = Some(batch.mean);
                cell.semantic_scorer = Some(batch.scorer_id);
            }
            Err(e) => log::warn!("{}: semantic score unavailable: {e}", cell.direction),
        }
    }
    Ok(cell)
}

fn by_id<'a>(ids: &[u64], segs: &'a [String]) -> BTreeMap<u64, &'a str> {
    ids.iter().copied().zip(segs.iter().map(String::as_str)).collect()
}

/// Translates and scores every ordered pair of `langs`.
pub fn eval_matrix(
    corpus: &MultiwayCorpus,
    langs: &[LangCode],
    adapter: &Adapter,
    params: &DecodingParams,
    tokenizers: &TokenizerMap,
    scorer: Option<&dyn SemanticScorer>,
    corpus_id: &str,
) -> Result<ScoreMatrix, ProbeError> {
    let mut languages = Vec::with_capacity(langs.len());
    for l in langs {
        languages.push(corpus.language(l)?.clone());
    }
    let mut cells = Vec::new();
    for direction in directions(&languages)? {
        let batch = adapter.translate_batch(corpus, &direction, params)?;
        let sources = by_id(corpus.ids(), corpus.segments(&direction.src)?);
        let refs = by_id(corpus.ids(), corpus.segments(&direction.tgt)?);
        let tok = tokenizers.for_lang(&direction.tgt);
        let cell = score_items(direction, &batch, &sources, &refs, tok, scorer)?;
        log::info!(
            "{}: bleu {} ({} failures)",
            cell.direction,
            cell.bleu_score().map_or("invalid".into(), |b| format!("{b:.2}")),
            cell.failures
        );
        cells.push(cell);
    }
    Ok(ScoreMatrix {
        schema_version: MATRIX_SCHEMA_VERSION,
        meta: MatrixMeta {
            model_id: adapter.model_id(),
            corpus_id: corpus_id.to_string(),
            params: params.clone(),
            tokenizers: tokenizers.clone(),
        },
        languages,
        cells,
    })
}

/// Scores an out-of-benchmark bitext for the same model.
pub fn eval_control(
    bitext: &Bitext,
    adapter: &Adapter,
    params: &DecodingParams,
    tokenizers: &TokenizerMap,
    scorer: Option<&dyn SemanticScorer>,
) -> Result<DirectionScore, ProbeError> {
    let direction = bitext.direction();
    let items: Vec<TranslateItem> = bitext
        .pairs()
        .iter()
        .enumerate()
        .map(|(i, (src, _))| TranslateItem {
            id: i as u64,
            benchmark_id: None,
            source: src.clone(),
        })
        .collect();
    let batch = adapter.translate_items(&items, &direction, params);
    let sources: BTreeMap<u64, &str> = bitext.pairs().iter().enumerate().map(|(i, p)| (i as u64, p.0.as_str())).collect();
    let refs: BTreeMap<u64, &str> = bitext.pairs().iter().enumerate().map(|(i, p)| (i as u64, p.1.as_str())).collect();
    let tok = tokenizers.for_lang(&direction.tgt);
    score_items(direction, &batch, &sources, &refs, tok, scorer)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlGap {
    pub direction: Direction,
    pub bench_bleu: f64,
    pub control_bleu: f64,
    pub gap: f64,
    pub flagged: bool,
}

/// `gap = bench − control`, flagged when `gap ≥ t_gap`.
pub fn control_gap_values(bench: f64, control: f64, t_gap: f64) -> (f64, bool) {
    let gap = bench - control;
    (gap, gap >= t_gap)
}

pub fn control_gap(
    bench: &DirectionScore,
    control: &DirectionScore,
    thresholds: &Thresholds,
) -> Result<ControlGap, ProbeError> {
    if bench.direction != control.direction {
        return Err(ProbeError::DirectionMismatch(format!(
            "benchmark {} vs control {}",
            bench.direction, control.direction
        )));
    }
    let (Some(b), Some(c)) = (&bench.bleu, &control.bleu) else {
        return Err(ProbeError::DirectionMismatch(format!(
            "{}: a score is missing or invalid",
            bench.direction
        )));
    };
    if b.tokenizer != c.tokenizer {
        return Err(ProbeError::DirectionMismatch(format!(
            "{}: tokenizers differ ({} vs {})",
            bench.direction,
            b.tokenizer.as_str(),
            c.tokenizer.as_str()
        )));
    }
    let (gap, flagged) = control_gap_values(b.score, c.score, thresholds.gap);
    Ok(ControlGap {
        direction: bench.direction.clone(),
        bench_bleu: b.score,
        control_bleu: c.score,
        gap,
        flagged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictClass {
    Contaminated,
    CleanStrong,
    Divergent,
    SurfaceOnly,
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub rule: String,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub direction: Direction,
    pub class: VerdictClass,
    pub evidence: Vec<Evidence>,
}

fn ev(rule: &str, value: f64, threshold: f64) -> Evidence {
    Evidence {
        rule: rule.to_string(),
        value,
        threshold,
    }
}

fn classify_cell(cell: &DirectionScore, control: Option<f64>, t: &Thresholds) -> Verdict {
    use VerdictClass::*;
    let mut evidence = Vec::new();
    let verdict = |class, evidence| Verdict {
        direction: cell.direction.clone(),
        class,
        evidence,
    };
    let Some(b) = cell.bleu_score() else {
        return verdict(Indeterminate, evidence);
    };
    let gap = control.map(|c| control_gap_values(b, c, t.gap));
    if let Some((g, _)) = gap {
        evidence.push(ev("control_gap >= gap", g, t.gap));
    }
    let corroborated = gap.map(|(_, f)| f);
    let Some(s) = cell.semantic else {
        if b >= t.contam_bleu && corroborated == Some(true) {
            evidence.insert(0, ev("bleu >= contam_bleu", b, t.contam_bleu));
            return verdict(Contaminated, evidence);
        }
        return verdict(Indeterminate, evidence);
    };
    let class = if b >= t.contam_bleu && s >= t.sem {
        evidence.insert(0, ev("bleu >= contam_bleu", b, t.contam_bleu));
        evidence.insert(1, ev("semantic >= sem", s, t.sem));
        if corroborated == Some(false) {
            Indeterminate
        } else {
            Contaminated
        }
    } else if b >= t.good_lo && b < t.contam_bleu && s >= t.sem {
        evidence.insert(0, ev("bleu >= good_lo", b, t.good_lo));
        evidence.insert(1, ev("semantic >= sem", s, t.sem));
        CleanStrong
    } else if b < t.low && s < t.sem_low {
        evidence.insert(0, ev("bleu < low", b, t.low));
        evidence.insert(1, ev("semantic < sem_low", s, t.sem_low));
        Divergent
    } else if b >= t.contam_bleu && s < t.sem {
        evidence.insert(0, ev("bleu >= contam_bleu", b, t.contam_bleu));
        evidence.insert(1, ev("semantic < sem", s, t.sem));
        SurfaceOnly
    } else {
        Indeterminate
    };
    verdict(class, evidence)
}

/// One verdict per cell, a pure function of cell values, thresholds and
/// control BLEU by direction.
pub fn classify(
    matrix: &ScoreMatrix,
    thresholds: &Thresholds,
    controls: &BTreeMap<Direction, f64>,
) -> Vec<Verdict> {
    matrix
        .cells
        .iter()
        .map(|c| classify_cell(c, controls.get(&c.direction).copied(), thresholds))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageAsymmetry {
    pub lang: LangCode,
    pub row_mean: f64,
    pub row_max: f64,
    pub col_mean: f64,
    pub col_max: f64,
    pub clean_column: bool,
    /// Column mean minus row mean.
    pub target_memorization_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryReport {
    pub languages: Vec<LanguageAsymmetry>,
    /// Languages by descending target memorization score.
    pub ranking: Vec<LangCode>,
    pub clean_column_max: f64,
}

fn mean_max(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, max)
}

/// Row (as source) against column (as target) statistics per language.
pub fn asymmetry(matrix: &ScoreMatrix, thresholds: &Thresholds) -> Result<AsymmetryReport, ProbeError> {
    if matrix.languages.len() < 3 {
        return Err(ProbeError::IncompleteMatrix(format!("{} languages", matrix.languages.len())));
    }
    if !matrix.is_complete() {
        return Err(ProbeError::IncompleteMatrix("cells missing".into()));
    }
    let mut out = Vec::new();
    for lang in &matrix.languages {
        let others = matrix.languages.iter().filter(|l| *l != lang);
        let row: Vec<f64> = others.clone().filter_map(|t| matrix.bleu(lang, t)).collect();
        let col: Vec<f64> = others.filter_map(|s| matrix.bleu(s, lang)).collect();
        if row.is_empty() || col.is_empty() {
            return Err(ProbeError::IncompleteMatrix(format!("no valid cells for {lang}")));
        }
        let (row_mean, row_max) = mean_max(&row);
        let (col_mean, col_max) = mean_max(&col);
        out.push(LanguageAsymmetry {
            lang: lang.clone(),
            row_mean,
            row_max,
            col_mean,
            col_max,
            clean_column: col_max < thresholds.clean_column_max,
            target_memorization_score: col_mean - row_mean,
        });
    }
    let mut ranking: Vec<&LanguageAsymmetry> = out.iter().collect();
    ranking.sort_by(|a, b| {
        b.target_memorization_score
            .total_cmp(&a.target_memorization_score)
            .then_with(|| a.lang.cmp(&b.lang))
    });
    let ranking = ranking.into_iter().map(|l| l.lang.clone()).collect();
    Ok(AsymmetryReport {
        languages: out,
        ranking,
        clean_column_max: thresholds.clean_column_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(s: &str) -> Direction {
        s.parse().unwrap()
    }

    fn cell(d: &str, bleu: f64, sem: Option<f64>) -> DirectionScore {
        DirectionScore::from_values(dir(d), bleu, sem, TokenizerId::Intl13a)
    }

    fn one(c: DirectionScore, control: Option<f64>) -> VerdictClass {
        classify_cell(&c, control, &Thresholds::default()).class
    }

    #[test]
    fn classifier_bands() {
        use VerdictClass::*;
        assert_eq!(one(cell("eng-tam", 80.0, Some(0.9)), None), Contaminated);
        assert_eq!(one(cell("eng-tam", 40.0, Some(0.9)), None), CleanStrong);
        assert_eq!(one(cell("eng-tam", 5.0, Some(0.5)), None), Divergent);
        assert_eq!(one(cell("eng-tam", 80.0, Some(0.5)), None), SurfaceOnly);
        assert_eq!(one(cell("eng-tam", 10.0, Some(0.7)), None), Indeterminate);
        assert_eq!(one(cell("eng-tam", 87.55, None), None), Indeterminate);
        assert_eq!(one(cell("eng-tam", 87.55, None), Some(0.11)), Contaminated);
        assert_eq!(one(cell("eng-tam", 80.0, Some(0.9)), Some(70.0)), Indeterminate);
        let v = classify_cell(&cell("eng-tam", 80.0, Some(0.9)), None, &Thresholds::default());
        assert!(!v.evidence.is_empty());
    }

    #[test]
    fn gap_rule() {
        let t = Thresholds::default();
        for (b, c) in [(87.55, 0.11), (75.44, 0.12), (69.21, 1.85)] {
            assert!(control_gap_values(b, c, t.gap).1);
        }
        assert!(!control_gap_values(40.0, 38.0, t.gap).1);
        assert!(!control_gap_values(0.8, 0.6, t.gap).1);
        let g = control_gap(&cell("eng-mal", 75.44, None), &cell("eng-mal", 0.12, None), &t).unwrap();
        assert!((g.gap - 75.32).abs() < 1e-9 && g.flagged);
        assert!(control_gap(&cell("eng-mal", 75.44, None), &cell("eng-tam", 0.12, None), &t).is_err());
    }
}
