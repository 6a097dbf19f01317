mod common;

use std::fs;

use common::*;
use segpref::judge::ReplayJudge;
use segpref::records::ScoredRecord;

fn scored(path: &str) -> Vec<ScoredRecord> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn recorded_mock_scores_replay_identically() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("recorded");
    let rec_s = rec.to_string_lossy().into_owned();
    let cfg = fixture("config.toml");
    let tasks = fixture("tasks.jsonl");
    let parsed = path(dir.path(), "parsed.jsonl");
    assert_eq!(
        segpref(&["parse", "--input", &fixture("corpus.jsonl"), "--output", &parsed]).code,
        0
    );

    let live = path(dir.path(), "live.jsonl");
    let out = segpref(&[
        "--config",
        &cfg,
        "score",
        "--input",
        &parsed,
        "--tasks",
        &tasks,
        "--output",
        &live,
        "--record-dir",
        &rec_s,
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(ReplayJudge::load_dir(&rec).unwrap().len(), 40 * 4);

    let replayed = path(dir.path(), "replayed.jsonl");
    let out = segpref(&[
        "score",
        "--input",
        &parsed,
        "--tasks",
        &tasks,
        "--output",
        &replayed,
        "--judge",
        "replay",
        "--replay-dir",
        &rec_s,
        "--jobs",
        "5",
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let (a, b) = (scored(&live), scored(&replayed));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.scores, y.scores, "{}", x.id);
    }
    assert_eq!(fs::read(&live).unwrap(), fs::read(&replayed).unwrap());
}

#[test]
fn recorded_search_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let rec = path(dir.path(), "rec");
    let cfg = fixture("config.toml");
    let run = |extra: &[&str], tag: &str| {
        let tree = path(dir.path(), &format!("{tag}-tree.jsonl"));
        let paths = path(dir.path(), &format!("{tag}-paths.jsonl"));
        let tasks = fixture("search_tasks.jsonl");
        let script = fixture("script.jsonl");
        let mut args = vec![
            "--config",
            cfg.as_str(),
            "search",
            "--tasks",
            &tasks,
            "--script",
            &script,
            "--tree-out",
            &tree,
            "--paths-out",
            &paths,
            "--seed",
            "2",
        ];
        args.extend_from_slice(extra);
        let out = segpref(&args);
        assert_eq!(out.code, 0, "{}", out.stderr);
        (fs::read(tree).unwrap(), fs::read(paths).unwrap())
    };
    let live = run(&["--record-dir", &rec], "live");
    let replayed = run(&["--judge", "replay", "--replay-dir", &rec], "replay");
    assert_eq!(live, replayed);
}

#[test]
fn conflicting_replay_records_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let line = |out: &str| {
        format!(
            "{{\"task_id\":\"t\",\"rubric\":\"reasoning\",\"payload_sha256\":\"{}\",\"output\":\"{out}\"}}\n",
            "0".repeat(64)
        )
    };
    fs::write(
        dir.path().join("a.jsonl"),
        line("{\\\"task4_score\\\": 3}") + &line("{\\\"task4_score\\\": 2}"),
    )
    .unwrap();
    let err = ReplayJudge::load_dir(dir.path()).expect_err("conflict");
    assert!(err.to_string().contains("a.jsonl:2"), "{err}");
}
