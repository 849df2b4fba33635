//! CSV tables, SVG heatmaps and the versioned JSON report envelope.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{Direction, LangCode};
use crate::probes::ScoreMatrix;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("heatmap has no rows or columns")]
    EmptySpec,
    #[error("heatmap values do not match its {rows}×{cols} grid")]
    ShapeMismatch { rows: usize, cols: usize },
    #[error("matrices do not match: {0}")]
    MatrixMismatch(String),
    #[error("csv: {0}")]
    Csv(String),
}

/// `{schema_version, meta, payload}`. Run ids and timestamps live only in
/// `meta`, so payloads of repeated runs compare byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub schema_version: u32,
    pub meta: Value,
    pub payload: T,
}

impl<T> Report<T> {
    pub fn new(meta: Value, payload: T) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            meta,
            payload,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Bleu,
    Semantic,
}

impl Metric {
    fn value(self, m: &ScoreMatrix, src: &LangCode, tgt: &LangCode) -> Option<f64> {
        match self {
            Metric::Bleu => m.bleu(src, tgt),
            Metric::Semantic => m.semantic(src, tgt),
        }
    }
}

/// Sources as rows, targets as columns; invalid and identity cells empty;
/// two decimals.
pub fn matrix_csv(matrix: &ScoreMatrix, metric: Metric) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["source".to_string()];
    header.extend(matrix.languages.iter().map(ToString::to_string));
    w.write_record(&header).expect("in-memory write");
    for src in &matrix.languages {
        let mut row = vec![src.to_string()];
        for tgt in &matrix.languages {
            row.push(match (src != tgt).then(|| metric.value(matrix, src, tgt)).flatten() {
                Some(v) => format!("{v:.2}"),
                None => String::new(),
            });
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Parsed CSV grid: column codes, and per row its code and cells.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvGrid {
    pub cols: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

pub fn parse_matrix_csv(text: &str) -> Result<CsvGrid, ReportError> {
    let err = |e: csv::Error| ReportError::Csv(e.to_string());
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let cols: Vec<String> = r.headers().map_err(err)?.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(err)?;
        let mut cells = Vec::new();
        for f in rec.iter().skip(1) {
            cells.push(if f.is_empty() {
                None
            } else {
                Some(f.parse::<f64>().map_err(|e| ReportError::Csv(format!("{f:?}: {e}")))?)
            });
        }
        rows.push((rec.get(0).unwrap_or_default().to_string(), cells));
    }
    Ok(CsvGrid { cols, rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub fn parse(hex: &str) -> Option<Rgb> {
        let h = hex.strip_prefix('#')?;
        if h.len() != 6 {
            return None;
        }
        let c = |i: usize| u8::from_str_radix(&h[i..i + 2], 16).ok();
        Some(Rgb(c(0)?, c(2)?, c(4)?))
    }

    pub fn hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }

    /// Relative luminance (linear-light, Rec. 709 weights).
    pub fn luminance(self) -> f64 {
        let [r, g, b] = self.linear();
        0.2126 * r + 0.7152 * g + 0.0722 * b
    }

    fn linear(self) -> [f64; 3] {
        [self.0, self.1, self.2].map(|c| to_linear(c as f64 / 255.0))
    }
}

fn to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// Interpolates in linear light, where luminance is linear in `t`, so value
/// order maps to luminance order. `t` is clamped to [0, 1].
pub fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
    let t = t.clamp(0.0, 1.0);
    let (la, lb) = (a.linear(), b.linear());
    let ch = |i: usize| {
        let v = to_srgb(la[i] + (lb[i] - la[i]) * t);
        (v * 255.0).round().clamp(0.0, 255.0) as u8
    };
    Rgb(ch(0), ch(1), ch(2))
}

pub const BLUE: Rgb = Rgb(0x1f, 0x4e, 0x9c);
pub const RED: Rgb = Rgb(0xc0, 0x39, 0x2b);
pub const CENTER: Rgb = Rgb(0xf7, 0xf7, 0xf7);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColorScale {
    /// `low` at the range minimum, `high` at the maximum.
    Sequential { low: Rgb, high: Rgb },
    /// `center` at zero, `negative` at −limit, `positive` at +limit.
    Diverging { negative: Rgb, center: Rgb, positive: Rgb },
}

impl Default for ColorScale {
    fn default() -> Self {
        ColorScale::Sequential { low: BLUE, high: RED }
    }
}

impl ColorScale {
    pub fn color(&self, value: f64, range: (f64, f64)) -> Rgb {
        let (lo, hi) = range;
        match *self {
            ColorScale::Sequential { low, high } => {
                let t = if hi > lo { (value - lo) / (hi - lo) } else { 0.0 };
                lerp(low, high, t)
            }
            ColorScale::Diverging { negative, center, positive } => {
                let limit = lo.abs().max(hi.abs());
                if limit == 0.0 || value == 0.0 {
                    return center;
                }
                let t = value / limit;
                if t > 0.0 {
                    lerp(center, positive, t)
                } else {
                    lerp(center, negative, -t)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub title: String,
    /// Source languages.
    pub rows: Vec<String>,
    /// Target languages.
    pub cols: Vec<String>,
    /// `values[row][col]`; `None` is drawn hatched.
    pub values: Vec<Vec<Option<f64>>>,
    pub scale: ColorScale,
    pub range: (f64, f64),
}

impl HeatmapSpec {
    pub fn from_matrix(matrix: &ScoreMatrix, metric: Metric, title: impl Into<String>) -> Self {
        let names: Vec<String> = matrix.languages.iter().map(ToString::to_string).collect();
        let values = matrix
            .languages
            .iter()
            .map(|s| {
                matrix
                    .languages
                    .iter()
                    .map(|t| if s == t { None } else { metric.value(matrix, s, t) })
                    .collect()
            })
            .collect();
        Self {
            title: title.into(),
            rows: names.clone(),
            cols: names,
            values,
            scale: ColorScale::default(),
            range: match metric {
                Metric::Bleu => (0.0, 100.0),
                Metric::Semantic => (0.0, 1.0),
            },
        }
    }
}

/// tuned − base on a diverging scale centred at zero; the range is
/// symmetric around the largest absolute difference, or `limit` if given.
pub fn diff_heatmap(
    base: &ScoreMatrix,
    tuned: &ScoreMatrix,
    metric: Metric,
    limit: Option<f64>,
    title: impl Into<String>,
) -> Result<HeatmapSpec, ReportError> {
    if base.languages != tuned.languages {
        return Err(ReportError::MatrixMismatch("language lists differ".into()));
    }
    let mut spec = HeatmapSpec::from_matrix(tuned, metric, title);
    let mut max_abs: f64 = 0.0;
    for (i, s) in base.languages.iter().enumerate() {
        for (j, t) in base.languages.iter().enumerate() {
            let d = (s != t)
                .then(|| metric.value(tuned, s, t).zip(metric.value(base, s, t)))
                .flatten()
                .map(|(a, b)| a - b);
            if let Some(d) = d {
                max_abs = max_abs.max(d.abs());
            }
            spec.values[i][j] = d;
        }
    }
    let limit = limit.unwrap_or(max_abs);
    spec.range = (-limit, limit);
    spec.scale = ColorScale::Diverging {
        negative: BLUE,
        center: CENTER,
        positive: RED,
    };
    Ok(spec)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const CELL: usize = 44;
const LEFT: usize = 90;
const TOP: usize = 56;
const BAR_W: usize = 16;
const BAR_STEPS: usize = 50;

/// Standalone SVG 1.1 heatmap with a colour bar. Out-of-range values are
/// clamped with a warning; the output depends only on the spec.
pub fn heatmap_svg(spec: &HeatmapSpec) -> Result<String, ReportError> {
    let (nr, nc) = (spec.rows.len(), spec.cols.len());
    if nr == 0 || nc == 0 {
        return Err(ReportError::EmptySpec);
    }
    if spec.values.len() != nr || spec.values.iter().any(|r| r.len() != nc) {
        return Err(ReportError::ShapeMismatch { rows: nr, cols: nc });
    }
    let (lo, hi) = spec.range;
    let grid_w = nc * CELL;
    let grid_h = nr * CELL;
    let bar_x = LEFT + grid_w + 30;
    let width = bar_x + BAR_W + 70;
    let height = TOP + grid_h + 30;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r##"<defs><pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse" patternTransform="rotate(45)"><rect width="6" height="6" fill="#d9d9d9"/><line x1="0" y1="0" x2="0" y2="6" stroke="#8c8c8c" stroke-width="2"/></pattern></defs>"##
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + grid_w / 2,
        esc(&spec.title)
    );
    for (j, c) in spec.cols.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + j * CELL + CELL / 2,
            TOP - 8,
            esc(c)
        );
    }
    for (i, r) in spec.rows.iter().enumerate() {
        let y = TOP + i * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 6,
            y + CELL / 2 + 4,
            esc(r)
        );
        for (j, v) in spec.values[i].iter().enumerate() {
            let x = LEFT + j * CELL;
            if spec.rows[i] == spec.cols[j] {
                let _ = writeln!(s, r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="white" stroke="#ffffff"/>"##);
                continue;
            }
            match v {
                None => {
                    let _ = writeln!(
                        s,
                        r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="url(#hatch)" stroke="#ffffff"><title>{} → {}: n/a</title></rect>"##,
                        esc(&spec.rows[i]),
                        esc(&spec.cols[j])
                    );
                }
                Some(v) => {
                    if !v.is_finite() || *v < lo.min(hi) || *v > hi.max(lo) {
                        log::warn!("{} → {}: {v} outside [{lo}, {hi}], clamped", spec.rows[i], spec.cols[j]);
                    }
                    let fill = spec.scale.color(*v, spec.range).hex();
                    let text = if spec.scale.color(*v, spec.range).luminance() < 0.35 { "white" } else { "black" };
                    let _ = writeln!(
                        s,
                        r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#ffffff"><title>{} → {}: {v:.2}</title></rect>"##,
                        esc(&spec.rows[i]),
                        esc(&spec.cols[j])
                    );
                    let _ = writeln!(
                        s,
                        r#"<text x="{}" y="{}" text-anchor="middle" fill="{text}" font-size="10">{v:.1}</text>"#,
                        x + CELL / 2,
                        y + CELL / 2 + 4
                    );
                }
            }
        }
    }
    // Colour bar: top is the range maximum.
    let step_h = grid_h as f64 / BAR_STEPS as f64;
    for k in 0..BAR_STEPS {
        let t = 1.0 - (k as f64 + 0.5) / BAR_STEPS as f64;
        let v = lo + (hi - lo) * t;
        let _ = writeln!(
            s,
            r#"<rect x="{bar_x}" y="{:.2}" width="{BAR_W}" height="{:.2}" fill="{}"/>"#,
            TOP as f64 + k as f64 * step_h,
            step_h + 0.5,
            spec.scale.color(v, spec.range).hex()
        );
    }
    for (v, y) in [(hi, TOP + 4), ((lo + hi) / 2.0, TOP + grid_h / 2 + 4), (lo, TOP + grid_h)] {
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, bar_x + BAR_W + 4, fmt_tick(v));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn fmt_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Heatmap for a set of (direction, value) pairs over `langs`.
pub fn heatmap_from_cells(
    langs: &[LangCode],
    cells: &[(Direction, Option<f64>)],
    range: (f64, f64),
    scale: ColorScale,
    title: impl Into<String>,
) -> HeatmapSpec {
    let names: Vec<String> = langs.iter().map(ToString::to_string).collect();
    let values = langs
        .iter()
        .map(|s| {
            langs
                .iter()
                .map(|t| {
                    cells
                        .iter()
                        .find(|(d, _)| d.src == *s && d.tgt == *t)
                        .and_then(|(_, v)| *v)
                })
                .collect()
        })
        .collect();
    HeatmapSpec {
        title: title.into(),
        rows: names.clone(),
        cols: names,
        values,
        scale,
        range,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::DecodingParams;
    use crate::metrics::TokenizerId;
    use crate::probes::{DirectionScore, MatrixMeta, TokenizerMap};

    fn matrix(values: &[(&str, f64)]) -> ScoreMatrix {
        let languages: Vec<LangCode> = ["eng_Latn", "fra_Latn", "tam_Taml"].iter().map(|c| c.parse().unwrap()).collect();
        let mut cells = Vec::new();
        for d in crate::corpus::directions(&languages).unwrap() {
            let key = format!("{}-{}", d.src.iso3(), d.tgt.iso3());
            let v = values.iter().find(|(k, _)| *k == key).map_or(1.0, |(_, v)| *v);
            let mut c = DirectionScore::from_values(d, v, Some(0.5), TokenizerId::Intl13a);
            if v.is_nan() {
                c.valid = false;
            }
            cells.push(c);
        }
        ScoreMatrix {
            schema_version: 1,
            meta: MatrixMeta {
                model_id: "m".into(),
                corpus_id: "c".into(),
                params: DecodingParams::default(),
                tokenizers: TokenizerMap::default(),
            },
            languages,
            cells,
        }
    }

    #[test]
    fn csv_grid_and_round_trip() {
        let m = matrix(&[("eng-tam", 87.554), ("fra-eng", f64::NAN)]);
        let text = matrix_csv(&m, Metric::Bleu);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "source,eng_Latn,fra_Latn,tam_Taml");
        assert_eq!(lines[1], "eng_Latn,,1.00,87.55");
        assert_eq!(lines[2], "fra_Latn,,,1.00");
        let grid = parse_matrix_csv(&text).unwrap();
        assert_eq!(grid.rows[0].1, vec![None, Some(1.0), Some(87.55)]);
        assert_eq!(grid.rows[1].1[0], None);
    }

    #[test]
    fn gradient_endpoints_and_monotone_luminance() {
        let scale = ColorScale::default();
        assert_eq!(scale.color(0.0, (0.0, 100.0)), BLUE);
        assert_eq!(scale.color(100.0, (0.0, 100.0)), RED);
        let mut prev = scale.color(0.0, (0.0, 100.0)).luminance();
        for v in 1..=100 {
            let l = scale.color(v as f64, (0.0, 100.0)).luminance();
            assert!(l >= prev - 1e-3, "{v}");
            prev = l;
        }
    }

    #[test]
    fn svg_is_deterministic_and_marks_nulls() {
        let m = matrix(&[("eng-tam", 100.0), ("fra-eng", f64::NAN)]);
        let spec = HeatmapSpec::from_matrix(&m, Metric::Bleu, "BLEU");
        let a = heatmap_svg(&spec).unwrap();
        assert_eq!(a, heatmap_svg(&spec).unwrap());
        assert!(a.contains("url(#hatch)"));
        assert!(a.contains(&RED.hex()));
        let empty = HeatmapSpec {
            rows: vec![],
            cols: vec![],
            values: vec![],
            ..spec
        };
        assert!(matches!(heatmap_svg(&empty), Err(ReportError::EmptySpec)));
    }

    #[test]
    fn diff_colors() {
        let base = matrix(&[]);
        let same = diff_heatmap(&base, &base, Metric::Bleu, None, "d").unwrap();
        for row in &same.values {
            for v in row.iter().flatten() {
                assert_eq!(same.scale.color(*v, same.range), CENTER);
            }
        }
        let tuned = matrix(&[("fra-tam", 17.0)]);
        let d = diff_heatmap(&base, &tuned, Metric::Bleu, Some(16.0), "d").unwrap();
        assert_eq!(d.scale.color(d.values[1][2].unwrap(), d.range), RED);
        let back = diff_heatmap(&tuned, &base, Metric::Bleu, Some(16.0), "d").unwrap();
        assert_eq!(back.scale.color(back.values[1][2].unwrap(), back.range), BLUE);
    }
}
