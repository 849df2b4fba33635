use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn mtcontam(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtcontam"))
        .args(args)
        .args(["--output-dir", out.to_str().unwrap(), "--run-id", "t"])
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn eval_matrix_and_classify_on_memorizer() {
    let dir = tempfile::tempdir().unwrap();
    let out = mtcontam(dir.path(), &["eval-matrix", "--stub", "memorizer:exact:tam"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("t");
    assert!(run.join("heatmap_bleu.svg").is_file());
    let csv = std::fs::read_to_string(run.join("matrix_bleu.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let tam = header.iter().position(|h| *h == "tam_Taml").unwrap();
    for line in csv.lines().skip(1).filter(|l| !l.starts_with("tam_Taml")) {
        assert_eq!(line.split(',').nth(tam), Some("100.00"), "{line}");
    }
    let m = run.join("matrix.json");
    let out = mtcontam(dir.path(), &["classify", "--matrix", m.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = report(&run.join("verdicts.json"));
    for verdict in v["payload"]["verdicts"].as_array().unwrap() {
        let contaminated = verdict["class"] == "contaminated";
        assert_eq!(contaminated, verdict["direction"]["tgt"] == "tam_Taml", "{verdict}");
    }
    assert_eq!(v["payload"]["thresholds"]["contam_bleu"], 60.0);
    assert_eq!(v["meta"]["command"], "classify");
    let m = report(&m);
    assert_eq!(m["meta"]["config"]["model"]["stub"], "memorizer:exact:tam");
    assert_eq!(m["payload"]["meta"]["corpus_id"], "toy-v1");
}

#[test]
fn ft_diff_of_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    mtcontam(dir.path(), &["eval-matrix", "--stub", "echo", "--langs", "eng,fra,tam"]);
    let m = dir.path().join("t/matrix.json");
    let m = m.to_str().unwrap();
    let out = mtcontam(dir.path(), &["ft-diff", m, m]);
    assert_eq!(out.status.code(), Some(0));
    let p = &report(&dir.path().join("t/ft_diff.json"))["payload"];
    let cells: Vec<&Value> = p["seen"].as_array().unwrap().iter().chain(p["unseen"].as_array().unwrap()).collect();
    assert_eq!(cells.len(), 6);
    assert!(cells.iter().all(|c| c["delta_bleu"] == 0.0));
    assert!(dir.path().join("t/diff_bleu.svg").is_file());
}

#[test]
fn dry_run_counts_calls_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = mtcontam(dir.path(), &["eval-matrix", "--stub", "echo", "--langs", "eng,fra,tam", "--dry-run"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "planned adapter calls: 144");
    assert!(!dir.path().join("t").exists());
    assert!(!dir.path().join("cache").exists());
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["eval-matrix", "--no-such-flag"],
        &["eval-matrix"],
        &["eval-matrix", "--stub", "memorizer:sometimes:all"],
        &["eval-matrix", "--stub", "echo", "--langs", "eng,klingon"],
        &["eval-matrix", "--stub", "echo", "--parallelism", "0"],
        &["no-such-command"],
    ];
    for args in cases {
        let out = mtcontam(dir.path(), args);
        assert_eq!(out.status.code(), Some(64), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
    let help = mtcontam(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("MTCONTAM_API_TOKEN"));
}

#[test]
fn missing_input_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let out = mtcontam(dir.path(), &["classify", "--matrix", "/nonexistent/matrix.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_rejects_unknown_keys_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"model": {"stub": "echo"}, "colour": "blue"}"#).unwrap();
    let out = mtcontam(dir.path(), &["eval-matrix", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let good = dir.path().join("good.json");
    std::fs::write(
        &good,
        json!({
            "languages": ["eng", "fra", "tam"],
            "model": {"stub": "echo"},
            "thresholds": {"contam_bleu": 70.0},
            "parallelism": 2
        })
        .to_string(),
    )
    .unwrap();
    let out = mtcontam(
        dir.path(),
        &["eval-matrix", "--config", good.to_str().unwrap(), "--stub", "memorizer:exact:fra"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&dir.path().join("t/matrix.json"));
    assert_eq!(r["meta"]["config"]["model"]["stub"], "memorizer:exact:fra");
    assert_eq!(r["meta"]["config"]["thresholds"]["contam_bleu"], 70.0);
    assert_eq!(r["meta"]["config"]["parallelism"], 2);
    assert_eq!(r["payload"]["languages"].as_array().unwrap().len(), 3);
}

#[test]
fn control_gap_from_values_and_from_toy_control() {
    let dir = tempfile::tempdir().unwrap();
    let out = mtcontam(
        dir.path(),
        &["control-gap", "--direction", "eng-tam", "--bench-bleu", "40", "--control-bleu", "38"],
    );
    assert_eq!(out.status.code(), Some(0));
    let g = &report(&dir.path().join("t/control_gap.json"))["payload"]["gaps"][0];
    assert_eq!(g["flagged"], false);
    assert_eq!(g["gap"], 2.0);

    let out = mtcontam(dir.path(), &["control-gap", "--stub", "memorizer:exact:tam"]);
    assert_eq!(out.status.code(), Some(0));
    let g = &report(&dir.path().join("t/control_gap.json"))["payload"]["gaps"][0];
    assert_eq!(g["flagged"], true);
}

#[test]
fn ft_export_writes_pairs_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = mtcontam(dir.path(), &["ft-export", "--pivot", "eng", "--langs", "eng,fra,tam"]);
    assert_eq!(out.status.code(), Some(0));
    let run = dir.path().join("t");
    let lines = std::fs::read_to_string(run.join("train.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 4 * 24);
    let config = std::fs::read_to_string(run.join("config.yml")).unwrap();
    assert!(config.contains("learning_rate: 5e-6"));
    assert!(config.contains("num_epochs: 3"));
}

/// Chat endpoint that refuses any request mentioning "Paris".
fn refusing_server() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/chat", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    if line.trim_end().is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let body = String::from_utf8(body).unwrap();
                let (status, reply) = if body.contains("Paris") {
                    (400, "{}".to_string())
                } else {
                    (200, json!({"choices": [{"message": {"content": "{ok}"}}]}).to_string())
                };
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                );
            });
        }
    });
    url
}

#[test]
fn partial_failures_exit_2_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let url = refusing_server();
    let out = mtcontam(
        dir.path(),
        &["eval-matrix", "--endpoint", &url, "--model", "m", "--langs", "eng,fra,tam", "--scorer", "none"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&dir.path().join("t/matrix.json"));
    let failures: u64 = r["payload"]["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["failures"].as_u64().unwrap())
        .sum();
    assert!(failures > 0);
    assert!(r["payload"]["cells"].as_array().unwrap().iter().all(|c| c["valid"] == true));
}
