//! The bundled synthetic corpus: 8 languages × 24 sentences, English NER
//! annotations and an 8-line eng–tam control bitext, compiled into the
//! library so every workflow runs offline.
//!
//! Non-English sides are a deterministic word cipher of the English text
//! that keeps named entities verbatim, so entity surfaces align trivially.

use std::collections::BTreeMap;

use crate::corpus::{parse_segments, Bitext, LangCode, MultiwayCorpus};
use crate::perturb::{parse_ner, EntitySpan};

pub const CORPUS_ID: &str = "toy-v1";

const FILES: [(&str, &str); 8] = [
    ("eng_Latn", include_str!("../data/toy/eng_Latn.dev")),
    ("fra_Latn", include_str!("../data/toy/fra_Latn.dev")),
    ("spa_Latn", include_str!("../data/toy/spa_Latn.dev")),
    ("por_Latn", include_str!("../data/toy/por_Latn.dev")),
    ("vie_Latn", include_str!("../data/toy/vie_Latn.dev")),
    ("zho_Hans", include_str!("../data/toy/zho_Hans.dev")),
    ("tam_Taml", include_str!("../data/toy/tam_Taml.dev")),
    ("mal_Mlym", include_str!("../data/toy/mal_Mlym.dev")),
];

pub const NER_JSONL: &str = include_str!("../data/toy/eng_Latn.ner.jsonl");
const CONTROL_ENG: &str = include_str!("../data/toy/control/eng_Latn.txt");
const CONTROL_TAM: &str = include_str!("../data/toy/control/tam_Taml.txt");

pub fn languages() -> Vec<LangCode> {
    FILES.iter().map(|(c, _)| c.parse().expect("valid code")).collect()
}

pub fn corpus() -> MultiwayCorpus {
    let columns = FILES
        .iter()
        .map(|(code, text)| {
            let lang: LangCode = code.parse().expect("valid code");
            (lang, parse_segments(text, code).expect("toy corpus parses"))
        })
        .collect();
    MultiwayCorpus::from_segments(columns, None).expect("toy corpus is aligned")
}

pub fn english() -> LangCode {
    "eng_Latn".parse().expect("valid code")
}

pub fn ner() -> BTreeMap<u64, Vec<EntitySpan>> {
    parse_ner(NER_JSONL).expect("toy NER parses")
}

/// Out-of-benchmark eng→tam bitext.
pub fn control() -> Bitext {
    Bitext::from_pairs(
        english(),
        "tam_Taml".parse().expect("valid code"),
        parse_segments(CONTROL_ENG, "control eng").expect("control parses"),
        parse_segments(CONTROL_TAM, "control tam").expect("control parses"),
    )
    .expect("control is aligned")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::validate_spans;

    #[test]
    fn bundled_data_is_consistent() {
        let c = corpus();
        assert_eq!(c.languages().len(), 8);
        assert_eq!(c.len(), 24);
        let ner = ner();
        validate_spans(&ner, &c, &english()).unwrap();
        assert!(ner.values().filter(|s| !s.is_empty()).count() >= 18);
        assert_eq!(control().len(), 8);
    }
}
