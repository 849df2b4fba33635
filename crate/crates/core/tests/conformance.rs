//! Reference-scorer fixtures, tokenizer fixtures and rendered prompts.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::Deserialize;

use mtcontam::adapter::{builtin, Message, BUILTIN_IDS};
use mtcontam::metrics::{corpus_bleu, TokenizerId};

const TOL: f64 = 1e-4;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[derive(Deserialize)]
struct BleuFixture {
    name: String,
    tokenizer: TokenizerId,
    hyps: Vec<String>,
    refs: Vec<String>,
    expected_score: f64,
    expected_precisions: [f64; 4],
    expected_bp: f64,
    expected_hyp_len: u64,
    expected_ref_len: u64,
}

fn load_bleu_fixtures() -> Vec<BleuFixture> {
    let mut paths: Vec<_> = std::fs::read_dir(fixtures().join("bleu"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap())
        .collect()
}

#[test]
fn bleu_matches_reference_scorer() {
    let cases = load_bleu_fixtures();
    assert!(cases.len() >= 12, "only {} fixtures", cases.len());
    let start = Instant::now();
    for f in &cases {
        let s = corpus_bleu(&f.hyps, &f.refs, f.tokenizer).unwrap();
        assert!((s.score - f.expected_score).abs() <= TOL, "{}: {} vs {}", f.name, s.score, f.expected_score);
        for n in 0..4 {
            assert!(
                (s.precisions[n] - f.expected_precisions[n]).abs() <= TOL,
                "{} p{}: {} vs {}",
                f.name,
                n + 1,
                s.precisions[n],
                f.expected_precisions[n]
            );
        }
        assert!((s.brevity_penalty - f.expected_bp).abs() <= TOL, "{} bp", f.name);
        assert_eq!((s.hyp_len, s.ref_len), (f.expected_hyp_len, f.expected_ref_len), "{} lengths", f.name);
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn fixture_set_covers_required_cases() {
    let cases = load_bleu_fixtures();
    let has = |pred: &dyn Fn(&BleuFixture) -> bool| cases.iter().any(pred);
    assert!(has(&|f| f.tokenizer == TokenizerId::Intl13a));
    assert!(has(&|f| f.tokenizer == TokenizerId::Cjk13a));
    assert!(has(&|f| f.hyps == f.refs && f.expected_score > 99.99));
    assert!(has(&|f| f.hyps.iter().any(String::is_empty)));
    // Smoothing is active when some higher order has no matches but the
    // score is still positive.
    assert!(has(&|f| f.expected_score > 0.0 && f.expected_precisions.iter().any(|&p| p < 5.0)));
}

#[derive(Deserialize)]
struct TokCase {
    text: String,
    tokens: Vec<String>,
}

#[derive(Deserialize)]
struct TokFixtures {
    cases: BTreeMap<String, Vec<TokCase>>,
}

#[test]
fn tokenizers_match_reference() {
    let f: TokFixtures = serde_json::from_str(&std::fs::read_to_string(fixtures().join("tokenize.json")).unwrap()).unwrap();
    for (tok, cases) in &f.cases {
        let id: TokenizerId = tok.parse().unwrap();
        for c in cases {
            assert_eq!(id.tokenize(&c.text), c.tokens, "{tok} on {:?}", c.text);
        }
    }
}

#[derive(Deserialize)]
struct PromptFixtures {
    bindings: BTreeMap<String, String>,
    rendered: BTreeMap<String, Vec<Message>>,
}

#[test]
fn templates_render_byte_for_byte() {
    let f: PromptFixtures = serde_json::from_str(&std::fs::read_to_string(fixtures().join("prompts.json")).unwrap()).unwrap();
    assert_eq!(f.rendered.len(), BUILTIN_IDS.len());
    for id in BUILTIN_IDS {
        let t = builtin(id).unwrap();
        let got = t.render(&f.bindings).unwrap();
        assert_eq!(&got, &f.rendered[id], "{id}");
    }
}
