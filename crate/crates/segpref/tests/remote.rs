mod common;

use std::sync::atomic::Ordering;
use std::time::Duration;

use common::*;
use segpref::judge::{RemoteConfig, RemoteJudge};
use segpref_core::judge::{Judge, JudgeError, JudgeRequest, Rubric};
use segpref_core::TaskInstance;

fn config(url: &str) -> RemoteConfig {
    RemoteConfig {
        endpoint: url.to_string(),
        api_key: None,
        timeout: Duration::from_secs(5),
        retries: 3,
        backoff: Duration::from_millis(1),
        concurrency: 2,
    }
}

fn request(rubric: Rubric) -> JudgeRequest {
    let mut task = TaskInstance::new("kitchen-island", "How tall is the kitchen island?");
    task.ground_truth = Some("95 cm".into());
    JudgeRequest::for_task(
        &task,
        rubric,
        "### Description\nA stool.\n\n### In Conclusion\nIt is 95 cm tall.\n",
    )
}

#[test]
fn retries_server_errors_then_succeeds() {
    let server = stub_server(|n, body| {
        if n < 2 {
            (503, "busy".into())
        } else {
            (200, canned_answer(body))
        }
    });
    let judge = RemoteJudge::new(config(&server.url));
    let got = judge.judge_description(&request(Rubric::Description)).unwrap();
    assert_eq!(got.value.attribute_accuracy, 0.5);
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn gives_up_after_the_retry_budget() {
    let server = stub_server(|_, _| (500, "down".into()));
    let judge = RemoteJudge::new(config(&server.url));
    let err = judge.judge_reasoning(&request(Rubric::Reasoning)).unwrap_err();
    assert!(err.is_external(), "{err:?}");
    assert_eq!(server.hits.load(Ordering::SeqCst), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let server = stub_server(|_, _| (401, "no key".into()));
    let judge = RemoteJudge::new(config(&server.url));
    assert!(judge.judge_reasoning(&request(Rubric::Reasoning)).is_err());
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_output_is_reported_with_its_payload() {
    let server = stub_server(|_, _| (200, "{\"task4_score\": 3.0, \"factual_consistency\": 1}".into()));
    let judge = RemoteJudge::new(config(&server.url));
    match judge.judge_reasoning(&request(Rubric::Reasoning)) {
        Err(JudgeError::Malformed { payload, .. }) => assert!(payload.contains("task4_score")),
        other => panic!("expected malformed, got {other:?}"),
    }
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn node_requests_go_out_once_per_model() {
    let server = stub_server(|_, body| {
        let req: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(req["rubric"], "node");
        assert!(req["model"].is_string());
        assert!(req["prompt"].as_str().unwrap().contains("kitchen island"));
        (200, canned_answer(body))
    });
    let judge = RemoteJudge::new(config(&server.url));
    let models = vec!["m1".to_string(), "m2".to_string()];
    let got = judge.judge_node(&request(Rubric::Node), &models).unwrap();
    assert_eq!(got.len(), 2);
    assert_eq!(got[1].model_id, "m2");
    assert_eq!(got[0].sum(), 2);
}

#[test]
fn slow_server_times_out() {
    let server = stub_server(|_, body| {
        std::thread::sleep(Duration::from_millis(600));
        (200, canned_answer(body))
    });
    let mut cfg = config(&server.url);
    cfg.timeout = Duration::from_millis(150);
    cfg.retries = 0;
    let err = RemoteJudge::new(cfg)
        .judge_description(&request(Rubric::Description))
        .unwrap_err();
    assert!(matches!(err, JudgeError::Timeout { .. }), "{err:?}");
}
