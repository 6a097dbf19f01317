mod common;

use std::fs;
use std::time::Instant;

use common::*;

#[test]
fn golden_pipeline_is_bit_identical_across_runs() {
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = golden_pipeline(a.path(), "11");
    let second = golden_pipeline(b.path(), "11");
    for (x, y) in first.iter().zip(&second) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{} differs", x.display());
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn golden_pipeline_outputs_make_sense() {
    let dir = tempfile::tempdir().unwrap();
    golden_pipeline(dir.path(), "3");
    let pairs = fs::read_to_string(dir.path().join("pairs.jsonl")).unwrap();
    let pairs: Vec<serde_json::Value> = pairs.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    // Five selected pairs plus a perturbed one for each numeric task.
    assert_eq!(pairs.len(), 9);
    for p in &pairs {
        let total = |s: &serde_json::Value| s["score_desc"].as_f64().unwrap() + s["score_reason"].as_f64().unwrap();
        assert!(total(&p["scores_p"]) > total(&p["scores_l"]), "{}", p["pair_id"]);
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["quantitative_total"], 4);
    assert_eq!(report["summary"]["qualitative_total"], 1);
}

#[test]
fn different_seeds_change_perturbations() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    golden_pipeline(a.path(), "1");
    golden_pipeline(b.path(), "2");
    assert_ne!(
        fs::read(a.path().join("pairs.jsonl")).unwrap(),
        fs::read(b.path().join("pairs.jsonl")).unwrap()
    );
}

#[test]
fn eval_of_reference_answers_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = path(dir.path(), "eval.json");
    let out = segpref(&[
        "eval",
        "--tasks",
        &fixture("tasks.jsonl"),
        "--predictions",
        &fixture("predictions.jsonl"),
        "--output",
        &out_path,
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(
        out.stdout.contains("quantitative 4/4  qualitative 1/1"),
        "{}",
        out.stdout
    );
}

fn search(dir: &std::path::Path, extra: &[&str]) -> (Vec<u8>, Vec<u8>) {
    let cfg = fixture("config.toml");
    let (tree, paths) = (path(dir, "tree.jsonl"), path(dir, "paths.jsonl"));
    let mut args = vec![
        "--config",
        &cfg,
        "search",
        "--tasks",
        "",
        "--tree-out",
        &tree,
        "--paths-out",
        &paths,
        "--seed",
        "5",
    ];
    let tasks = fixture("search_tasks.jsonl");
    args[4] = &tasks;
    args.extend_from_slice(extra);
    let out = segpref(&args);
    assert_eq!(out.code, 0, "{}", out.stderr);
    (fs::read(&tree).unwrap(), fs::read(&paths).unwrap())
}

#[test]
fn scripted_search_is_deterministic_and_ranks_correct_answers_first() {
    let script = fixture("script.jsonl");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = search(a.path(), &["--script", &script]);
    assert_eq!(first, search(b.path(), &["--script", &script]));
    let paths = String::from_utf8(first.1).unwrap();
    let best: serde_json::Value = serde_json::from_str(paths.lines().next().unwrap()).unwrap();
    assert_eq!(best["source"], "m3cts");
    assert!(best["text"]
        .as_str()
        .unwrap()
        .ends_with("### In Conclusion\nThe kitchen island is 95 cm tall.\n"));
}

#[test]
fn seeded_search_output_parses_as_a_corpus() {
    let bank = fixture("bank.json");
    let dir = tempfile::tempdir().unwrap();
    let (_, paths) = search(dir.path(), &["--bank", &bank, "--expanders", "gen-x,gen-y"]);
    assert!(!paths.is_empty());
    let out = segpref(&[
        "parse",
        "--input",
        &path(dir.path(), "paths.jsonl"),
        "--output",
        &path(dir.path(), "p.jsonl"),
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
}

#[test]
fn synth_and_experiment_run() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = path(dir.path(), "synth.jsonl");
    let out = segpref(&["synth", "--count", "60", "--seed", "4", "--output", &pairs]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(fs::read_to_string(&pairs).unwrap().lines().count(), 60);
    let report = path(dir.path(), "report.json");
    let table = path(dir.path(), "table.txt");
    let out = segpref(&[
        "experiment",
        "--pairs",
        &pairs,
        "--seed",
        "4",
        "--steps",
        "30",
        "--output",
        &report,
        "--table",
        &table,
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(fs::read_to_string(&table).unwrap(), out.stdout);
    let out = segpref(&[
        "sweep",
        "--synthetic",
        "60",
        "--seed",
        "4",
        "--steps",
        "10",
        "--output",
        &report,
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(segpref(&["--help"]).code, 0);
    assert_eq!(segpref(&["--version"]).code, 0);
    assert_eq!(segpref(&["train", "--help"]).code, 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(segpref(&[]).code, 1);
    assert_eq!(segpref(&["frobnicate"]).code, 1);
    // `train` needs an explicit seed.
    assert_eq!(
        segpref(&["train", "--pairs", "p", "--policy-out", "a", "--metrics-out", "b"]).code,
        1
    );
}

#[test]
fn input_errors_exit_one_and_name_the_item() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = path(dir.path(), "out.jsonl");

    let missing = path(dir.path(), "nope.jsonl");
    let out = segpref(&["parse", "--input", &missing, "--output", &out_path]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("nope.jsonl"), "{}", out.stderr);

    let bad = path(dir.path(), "bad.jsonl");
    fs::write(
        &bad,
        "{\"id\": \"a\", \"task_id\": \"t\", \"text\": \"x\"}\n{\"id\": 3}\n",
    )
    .unwrap();
    let out = segpref(&["parse", "--input", &bad, "--output", &out_path]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("bad.jsonl:2"), "{}", out.stderr);

    fs::write(
        &bad,
        "{\"id\": \"r7\", \"task_id\": \"t\", \"text\": \"### Summary\\nx\\n\"}\n",
    )
    .unwrap();
    let out = segpref(&["parse", "--input", &bad, "--output", &out_path]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("r7"), "{}", out.stderr);
    assert!(!dir.path().join("out.jsonl").exists());

    let cfg = path(dir.path(), "bad.toml");
    fs::write(&cfg, "[fdpo]\nalpha = 2.0\n").unwrap();
    let out = segpref(&["--config", &cfg, "synth", "--seed", "1", "--output", &out_path]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("[fdpo]"), "{}", out.stderr);

    fs::write(&cfg, "[fdpo]\nalpah = 0.2\n").unwrap();
    assert_eq!(
        segpref(&["--config", &cfg, "synth", "--seed", "1", "--output", &out_path]).code,
        1
    );
}

#[test]
fn judge_service_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let parsed = path(dir.path(), "parsed.jsonl");
    assert_eq!(
        segpref(&["parse", "--input", &fixture("corpus.jsonl"), "--output", &parsed]).code,
        0
    );
    let scored = path(dir.path(), "scored.jsonl");
    let tasks = fixture("tasks.jsonl");

    // Empty replay directory: nothing recorded for these requests.
    let empty = tempfile::tempdir().unwrap();
    let out = segpref(&[
        "score",
        "--input",
        &parsed,
        "--tasks",
        &tasks,
        "--output",
        &scored,
        "--judge",
        "replay",
        "--replay-dir",
        &empty.path().to_string_lossy(),
    ]);
    assert_eq!(out.code, 2, "{}", out.stderr);
    assert!(out.stderr.contains("kitchen-island"), "{}", out.stderr);

    // Nothing listens on this port.
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let cfg = path(dir.path(), "remote.toml");
    fs::write(
        &cfg,
        "[judge]\nbackend = \"remote\"\nretries = 1\nbackoff_ms = 1\ntimeout_ms = 2000\n",
    )
    .unwrap();
    let endpoint = format!("http://127.0.0.1:{port}/judge");
    let out = segpref(&[
        "--config",
        &cfg,
        "score",
        "--input",
        &parsed,
        "--tasks",
        &tasks,
        "--output",
        &scored,
        "--endpoint",
        &endpoint,
    ]);
    assert_eq!(out.code, 2, "{}", out.stderr);

    // A remote backend with no endpoint anywhere is a configuration error.
    let out = segpref(&[
        "--config", &cfg, "score", "--input", &parsed, "--tasks", &tasks, "--output", &scored,
    ]);
    assert_eq!(out.code, 1, "{}", out.stderr);
}

#[test]
fn remote_backend_scores_through_the_cli() {
    let server = stub_server(|_, body| (200, canned_answer(body)));
    let dir = tempfile::tempdir().unwrap();
    let parsed = path(dir.path(), "parsed.jsonl");
    assert_eq!(
        segpref(&["parse", "--input", &fixture("corpus.jsonl"), "--output", &parsed]).code,
        0
    );
    let scored = path(dir.path(), "scored.jsonl");
    let out = segpref_env(
        &[
            "score",
            "--input",
            &parsed,
            "--tasks",
            &fixture("tasks.jsonl"),
            "--output",
            &scored,
            "--judge",
            "remote",
            "--jobs",
            "3",
        ],
        &[("JUDGE_ENDPOINT", &server.url), ("JUDGE_API_KEY", "k")],
    );
    assert_eq!(out.code, 0, "{}", out.stderr);
    let first: serde_json::Value =
        serde_json::from_str(fs::read_to_string(&scored).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["scores"]["r_vc"], 3.5);
    assert_eq!(first["scores"]["r_lc"], 3.0);
    // 40 responses, four rubrics each.
    assert_eq!(server.hits.load(std::sync::atomic::Ordering::SeqCst), 160);
}
