//! Multiway-parallel benchmark corpora, bilingual control corpora and
//! language codes.
//!
//! A corpus is a set of per-language plain-text files with one segment per
//! line; line `i` of every file is the same sentence. Segments are stored
//! raw (only surrounding whitespace is stripped) because tokenization is the
//! metric's job.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid language code {0:?}")]
    InvalidLangCode(String),
    #[error("no file for language {lang} under {root} (tried {tried})")]
    MissingLanguageFile {
        lang: String,
        root: PathBuf,
        tried: String,
    },
    #[error("length mismatch: {first} has {first_len} segments, {second} has {second_len}")]
    LengthMismatch {
        first: String,
        first_len: usize,
        second: String,
        second_len: usize,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{source_name}: line {line} is empty")]
    EmptyLine { source_name: String, line: usize },
    #[error("at least two languages are required, got {0}")]
    TooFewLanguages(usize),
    #[error("language {0} listed more than once")]
    DuplicateLanguage(String),
    #[error("language {0} is not part of the corpus")]
    UnknownLanguage(String),
    #[error("sentence id {0} is not part of the corpus")]
    UnknownId(u64),
    #[error("bad id file {path}: {reason}")]
    BadIdFile { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// A language identified by ISO 639-3 code and an optional ISO 15924 script.
///
/// Equality and hashing ignore the display name.
#[derive(Clone, Debug)]
pub struct LangCode {
    iso3: String,
    script: Option<String>,
    display_name: String,
}

/// Bare codes used in the audit and their FLORES-style scripted form.
const ALIASES: &[(&str, &str, &str)] = &[
    ("eng", "eng_Latn", "English"),
    ("zho", "zho_Hans", "Simplified Chinese"),
    ("spa", "spa_Latn", "Spanish"),
    ("por", "por_Latn", "Portuguese"),
    ("fra", "fra_Latn", "French"),
    ("vie", "vie_Latn", "Vietnamese"),
    ("mal", "mal_Mlym", "Malayalam"),
    ("tam", "tam_Taml", "Tamil"),
    ("asm", "asm_Beng", "Assamese"),
    ("ory", "ory_Orya", "Odia"),
    ("bam", "bam_Latn", "Bambara"),
    ("fon", "fon_Latn", "Fon"),
    ("ewe", "ewe_Latn", "Ewe"),
    ("kik", "kik_Latn", "Kikuyu"),
    ("mri", "mri_Latn", "Maori"),
    ("xho", "xho_Latn", "Xhosa"),
    ("jpn", "jpn_Jpan", "Japanese"),
    ("deu", "deu_Latn", "German"),
    ("fil", "fil_Latn", "Filipino"),
    ("swa", "swh_Latn", "Swahili"),
];

fn valid_iso3(s: &str) -> bool {
    s.len() == 3 && s.bytes().all(|b| b.is_ascii_lowercase())
}

fn valid_script(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 4 && b[0].is_ascii_uppercase() && b[1..].iter().all(u8::is_ascii_lowercase)
}

impl LangCode {
    pub fn new(iso3: &str, script: Option<&str>) -> Result<Self> {
        let shown = match script {
            Some(s) => format!("{iso3}_{s}"),
            None => iso3.to_string(),
        };
        if !valid_iso3(iso3) || script.is_some_and(|s| !valid_script(s)) {
            return Err(CorpusError::InvalidLangCode(shown));
        }
        let display_name = ALIASES
            .iter()
            .find(|(bare, scripted, _)| *bare == iso3 || scripted.starts_with(iso3))
            .map(|(_, _, name)| name.to_string())
            .unwrap_or_else(|| iso3.to_string());
        Ok(Self {
            iso3: iso3.to_string(),
            script: script.map(str::to_string),
            display_name,
        })
    }

    /// Parses `code` and maps a bare registry code to its scripted form.
    /// Unknown or already-scripted codes pass through unchanged.
    pub fn resolve(code: &str) -> Result<Self> {
        let parsed: LangCode = code.parse()?;
        if parsed.script.is_some() {
            return Ok(parsed);
        }
        match ALIASES.iter().find(|(bare, _, _)| *bare == code) {
            Some((_, scripted, _)) => scripted.parse(),
            None => Ok(parsed),
        }
    }

    pub fn iso3(&self) -> &str {
        &self.iso3
    }

    pub fn script(&self) -> Option<&str> {
        self.script.as_deref()
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    pub fn with_display_name(mut self, name: impl Into<String>) -> Self {
        self.display_name = name.into();
        self
    }

    /// Han-script languages need character-level BLEU tokenization.
    pub fn is_han(&self) -> bool {
        matches!(self.script.as_deref(), Some("Hans" | "Hant" | "Hani"))
    }

    /// Candidate file stems, most specific first.
    fn file_stems(&self) -> Vec<String> {
        let mut stems = vec![self.to_string()];
        if self.script.is_none() {
            if let Ok(resolved) = LangCode::resolve(&self.iso3) {
                if resolved.script.is_some() {
                    stems.insert(0, resolved.to_string());
                }
            }
        } else {
            stems.push(self.iso3.clone());
        }
        stems
    }
}

impl PartialEq for LangCode {
    fn eq(&self, other: &Self) -> bool {
        self.iso3 == other.iso3 && self.script == other.script
    }
}

impl Eq for LangCode {}

impl std::hash::Hash for LangCode {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.iso3.hash(state);
        self.script.hash(state);
    }
}

impl PartialOrd for LangCode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for LangCode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (&self.iso3, &self.script).cmp(&(&other.iso3, &other.script))
    }
}

impl fmt::Display for LangCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.script {
            Some(s) => write!(f, "{}_{}", self.iso3, s),
            None => f.write_str(&self.iso3),
        }
    }
}

impl FromStr for LangCode {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('_') {
            Some((iso3, script)) => LangCode::new(iso3, Some(script)),
            None => LangCode::new(s, None),
        }
    }
}

impl Serialize for LangCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LangCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An ordered translation pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Direction {
    pub src: LangCode,
    pub tgt: LangCode,
}

impl Direction {
    pub fn new(src: LangCode, tgt: LangCode) -> Self {
        Self { src, tgt }
    }

    pub fn is_identity(&self) -> bool {
        self.src == self.tgt
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}

impl FromStr for Direction {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        let (src, tgt) = s
            .split_once('-')
            .ok_or_else(|| CorpusError::InvalidLangCode(s.to_string()))?;
        Ok(Direction::new(src.parse()?, tgt.parse()?))
    }
}

/// All ordered pairs of distinct languages, row-major over the input order.
pub fn directions(langs: &[LangCode]) -> Result<Vec<Direction>> {
    if langs.len() < 2 {
        return Err(CorpusError::TooFewLanguages(langs.len()));
    }
    check_unique(langs)?;
    let mut out = Vec::with_capacity(langs.len() * (langs.len() - 1));
    for src in langs {
        for tgt in langs {
            if src != tgt {
                out.push(Direction::new(src.clone(), tgt.clone()));
            }
        }
    }
    Ok(out)
}

fn check_unique(langs: &[LangCode]) -> Result<()> {
    let mut seen = HashSet::new();
    for lang in langs {
        if !seen.insert(lang) {
            return Err(CorpusError::DuplicateLanguage(lang.to_string()));
        }
    }
    Ok(())
}

/// Line-aligned segments across languages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiwayCorpus {
    languages: Vec<LangCode>,
    segments: Vec<Vec<String>>,
    ids: Vec<u64>,
}

impl MultiwayCorpus {
    /// Builds a corpus from in-memory segments, applying the same checks as
    /// [`load_multiway`].
    pub fn from_segments(
        columns: Vec<(LangCode, Vec<String>)>,
        ids: Option<Vec<u64>>,
    ) -> Result<Self> {
        let languages: Vec<LangCode> = columns.iter().map(|(l, _)| l.clone()).collect();
        check_unique(&languages)?;
        let mut segments = Vec::with_capacity(columns.len());
        for (lang, lines) in columns {
            let mut cleaned = Vec::with_capacity(lines.len());
            for (i, line) in lines.iter().enumerate() {
                cleaned.push(clean_segment(line, &lang.to_string(), i + 1)?);
            }
            segments.push(cleaned);
        }
        let n = segments.first().map(Vec::len).unwrap_or(0);
        for (lang, segs) in languages.iter().zip(&segments) {
            if segs.len() != n {
                return Err(CorpusError::LengthMismatch {
                    first: languages[0].to_string(),
                    first_len: n,
                    second: lang.to_string(),
                    second_len: segs.len(),
                });
            }
        }
        if n == 0 {
            return Err(CorpusError::EmptyCorpus);
        }
        let ids = match ids {
            Some(ids) => {
                if ids.len() != n {
                    return Err(CorpusError::LengthMismatch {
                        first: languages[0].to_string(),
                        first_len: n,
                        second: "ids".into(),
                        second_len: ids.len(),
                    });
                }
                ids
            }
            None => (0..n as u64).collect(),
        };
        Ok(Self {
            languages,
            segments,
            ids,
        })
    }

    pub fn languages(&self) -> &[LangCode] {
        &self.languages
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, lang: &LangCode) -> bool {
        self.column(lang).is_ok()
    }

    /// Exact match, or for a script-less code the only language with that
    /// ISO 639-3 code.
    fn column(&self, lang: &LangCode) -> Result<usize> {
        if let Some(i) = self.languages.iter().position(|l| l == lang) {
            return Ok(i);
        }
        let mut same = self
            .languages
            .iter()
            .enumerate()
            .filter(|(_, l)| lang.script.is_none() && l.iso3 == lang.iso3);
        match (same.next(), same.next()) {
            (Some((i, _)), None) => Ok(i),
            _ => Err(CorpusError::UnknownLanguage(lang.to_string())),
        }
    }

    /// Language code as stored in the corpus (keeps its display name).
    pub fn language(&self, lang: &LangCode) -> Result<&LangCode> {
        Ok(&self.languages[self.column(lang)?])
    }

    pub fn segments(&self, lang: &LangCode) -> Result<&[String]> {
        Ok(&self.segments[self.column(lang)?])
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn segment(&self, lang: &LangCode, id: u64) -> Result<&str> {
        let row = self.position(id).ok_or(CorpusError::UnknownId(id))?;
        Ok(&self.segments(lang)?[row])
    }

    /// Rows for `ids`, in the order given.
    pub fn subset(&self, ids: &[u64]) -> Result<MultiwayCorpus> {
        let rows = ids
            .iter()
            .map(|&id| self.position(id).ok_or(CorpusError::UnknownId(id)))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        Ok(MultiwayCorpus {
            languages: self.languages.clone(),
            segments: self
                .segments
                .iter()
                .map(|col| rows.iter().map(|&r| col[r].clone()).collect())
                .collect(),
            ids: ids.to_vec(),
        })
    }

    /// Restricts the corpus to `langs`, in that order.
    pub fn select(&self, langs: &[LangCode]) -> Result<MultiwayCorpus> {
        check_unique(langs)?;
        let cols = langs
            .iter()
            .map(|l| self.column(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiwayCorpus {
            languages: cols.iter().map(|&c| self.languages[c].clone()).collect(),
            segments: cols.iter().map(|&c| self.segments[c].clone()).collect(),
            ids: self.ids.clone(),
        })
    }

    /// Writes `<code>.<split>` per language, plus `<split>.ids` when the ids
    /// are not the default `0..N`.
    pub fn write(&self, root: &Path, split: &str) -> Result<()> {
        fs::create_dir_all(root).map_err(|source| CorpusError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        for (lang, segs) in self.languages.iter().zip(&self.segments) {
            let path = root.join(format!("{lang}.{split}"));
            write_lines(&path, segs.iter().map(String::as_str))?;
        }
        if self.ids.iter().enumerate().any(|(i, &id)| id != i as u64) {
            let ids: Vec<String> = self.ids.iter().map(u64::to_string).collect();
            write_lines(&root.join(format!("{split}.ids")), ids.iter().map(String::as_str))?;
        }
        Ok(())
    }
}

fn write_lines<'a>(path: &Path, lines: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut text = String::new();
    for line in lines {
        text.push_str(line);
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn clean_segment(raw: &str, source_name: &str, line: usize) -> Result<String> {
    let seg = raw.trim();
    if seg.is_empty() {
        return Err(CorpusError::EmptyLine {
            source_name: source_name.to_string(),
            line,
        });
    }
    if seg.contains(['\n', '\r']) {
        return Err(CorpusError::EmptyLine {
            source_name: source_name.to_string(),
            line,
        });
    }
    Ok(seg.to_string())
}

/// Reads one segment per line; accepts LF or CRLF and a trailing newline.
pub fn read_segments(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_segments(&text, &path.display().to_string())
}

pub fn parse_segments(text: &str, source_name: &str) -> Result<Vec<String>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let line = line.strip_suffix('\r').unwrap_or(line);
            clean_segment(line, source_name, i + 1)
        })
        .collect()
}

/// Loads `<code>.<split>` for each language under `root`.
pub fn load_multiway(root: &Path, langs: &[LangCode], split: &str) -> Result<MultiwayCorpus> {
    check_unique(langs)?;
    let mut columns = Vec::with_capacity(langs.len());
    for lang in langs {
        let stems = lang.file_stems();
        let path = stems
            .iter()
            .map(|stem| root.join(format!("{stem}.{split}")))
            .find(|p| p.is_file())
            .ok_or_else(|| CorpusError::MissingLanguageFile {
                lang: lang.to_string(),
                root: root.to_path_buf(),
                tried: stems
                    .iter()
                    .map(|s| format!("{s}.{split}"))
                    .collect::<Vec<_>>()
                    .join(", "),
            })?;
        columns.push((lang.clone(), read_segments(&path)?));
    }
    let ids_path = root.join(format!("{split}.ids"));
    let ids = if ids_path.is_file() {
        Some(read_ids(&ids_path)?)
    } else {
        None
    };
    MultiwayCorpus::from_segments(columns, ids)
}

fn read_ids(path: &Path) -> Result<Vec<u64>> {
    let lines = read_segments(path)?;
    let mut seen = HashSet::new();
    lines
        .iter()
        .map(|l| {
            let id: u64 = l.parse().map_err(|_| CorpusError::BadIdFile {
                path: path.to_path_buf(),
                reason: format!("not an integer: {l:?}"),
            })?;
            if !seen.insert(id) {
                return Err(CorpusError::BadIdFile {
                    path: path.to_path_buf(),
                    reason: format!("duplicate id {id}"),
                });
            }
            Ok(id)
        })
        .collect()
}

/// A bilingual control corpus for one direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bitext {
    pub src_lang: LangCode,
    pub tgt_lang: LangCode,
    pairs: Vec<(String, String)>,
}

impl Bitext {
    pub fn from_pairs(
        src_lang: LangCode,
        tgt_lang: LangCode,
        sources: Vec<String>,
        targets: Vec<String>,
    ) -> Result<Self> {
        if sources.len() != targets.len() {
            return Err(CorpusError::LengthMismatch {
                first: src_lang.to_string(),
                first_len: sources.len(),
                second: tgt_lang.to_string(),
                second_len: targets.len(),
            });
        }
        if sources.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut pairs = Vec::with_capacity(sources.len());
        for (i, (s, t)) in sources.iter().zip(&targets).enumerate() {
            pairs.push((
                clean_segment(s, &src_lang.to_string(), i + 1)?,
                clean_segment(t, &tgt_lang.to_string(), i + 1)?,
            ));
        }
        Ok(Self {
            src_lang,
            tgt_lang,
            pairs,
        })
    }

    pub fn direction(&self) -> Direction {
        Direction::new(self.src_lang.clone(), self.tgt_lang.clone())
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<String> {
        self.pairs.iter().map(|(s, _)| s.clone()).collect()
    }

    pub fn targets(&self) -> Vec<String> {
        self.pairs.iter().map(|(_, t)| t.clone()).collect()
    }
}

pub fn load_bitext(src_path: &Path, tgt_path: &Path, src: LangCode, tgt: LangCode) -> Result<Bitext> {
    let sources = read_segments(src_path)?;
    let targets = read_segments(tgt_path)?;
    Bitext::from_pairs(src, tgt, sources, targets)
}
