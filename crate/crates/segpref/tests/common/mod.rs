#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture(name: &str) -> String {
    fixtures().join(name).to_string_lossy().into_owned()
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the built binary with a clean judge environment.
pub fn segpref(args: &[&str]) -> Output {
    segpref_env(args, &[])
}

pub fn segpref_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_segpref"));
    cmd.args(args).env_remove("JUDGE_ENDPOINT").env_remove("JUDGE_API_KEY");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("spawn segpref");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Runs parse, mock scoring, pair building, training and policy-ranked
/// evaluation into `dir`. Returns the produced files in a fixed order.
pub fn golden_pipeline(dir: &Path, seed: &str) -> Vec<PathBuf> {
    let cfg = fixture("config.toml");
    let steps: Vec<Vec<String>> = vec![
        vec![
            "parse".into(),
            "--input".into(),
            fixture("corpus.jsonl"),
            "--output".into(),
            path(dir, "parsed.jsonl"),
        ],
        vec![
            "score".into(),
            "--input".into(),
            path(dir, "parsed.jsonl"),
            "--tasks".into(),
            fixture("tasks.jsonl"),
            "--output".into(),
            path(dir, "scored.jsonl"),
            "--jobs".into(),
            "4".into(),
        ],
        vec![
            "pairs".into(),
            "--input".into(),
            path(dir, "scored.jsonl"),
            "--tasks".into(),
            fixture("tasks.jsonl"),
            "--output".into(),
            path(dir, "pairs.jsonl"),
            "--perturb".into(),
            "--seed".into(),
            seed.into(),
        ],
        vec![
            "train".into(),
            "--pairs".into(),
            path(dir, "pairs.jsonl"),
            "--policy-out".into(),
            path(dir, "policy.json"),
            "--metrics-out".into(),
            path(dir, "metrics.jsonl"),
            "--seed".into(),
            seed.into(),
        ],
        vec![
            "eval".into(),
            "--tasks".into(),
            fixture("tasks.jsonl"),
            "--policy".into(),
            path(dir, "policy.json"),
            "--candidates".into(),
            path(dir, "parsed.jsonl"),
            "--output".into(),
            path(dir, "eval.json"),
        ],
    ];
    for step in steps {
        let mut args = vec!["--config", cfg.as_str()];
        args.extend(step.iter().map(String::as_str));
        let out = segpref(&args);
        assert_eq!(out.code, 0, "{step:?} failed: {}", out.stderr);
    }
    [
        "parsed.jsonl",
        "scored.jsonl",
        "pairs.jsonl",
        "policy.json",
        "metrics.jsonl",
        "eval.json",
    ]
    .iter()
    .map(|n| dir.join(n))
    .collect()
}

/// A one-thread-per-connection HTTP stub. `respond` gets the request body
/// and returns `(status, body)`.
pub struct StubServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

pub fn stub_server<F>(respond: F) -> StubServer
where
    F: Fn(usize, &str) -> (u16, String) + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let url = format!("http://{}/judge", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let respond = Arc::new(respond);
    let counter = Arc::clone(&hits);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let respond = Arc::clone(&respond);
            let n = counter.fetch_add(1, Ordering::SeqCst);
            thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0u8; len];
                if reader.read_exact(&mut body).is_err() {
                    return;
                }
                let (status, reply) = respond(n, &String::from_utf8_lossy(&body));
                let head = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                    reply.len()
                );
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    StubServer { url, hits }
}

/// Well-formed judge answers keyed on the request's rubric.
pub fn canned_answer(body: &str) -> String {
    let req: serde_json::Value = serde_json::from_str(body).expect("request body is JSON");
    match req["rubric"].as_str().unwrap() {
        "description" => r#"{"task1_score": 3.5, "existence": 1, "attribute_accuracy": 0.5, "completeness": 1, "appropriateness": 1}"#.into(),
        "spatial_desc" => r#"{"task2_claim_score": [[1, 1, 1]]}"#.into(),
        "spatial_reason" => r#"{"task3_claim_score": [[1, 0.9, 1], [0, 1, 0.8]]}"#.into(),
        "reasoning" => r#"{"output": "{\"task4_score\": 3.0}"}"#.into(),
        "node" => r#"{"indicators": [1, 0, 1]}"#.into(),
        other => panic!("unexpected rubric {other}"),
    }
}
