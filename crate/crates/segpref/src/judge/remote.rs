//! HTTP judge backend.
//!
//! Each rubric call is one POST carrying the reward prompt, the task fields
//! and the response text. Transport failures and 5xx/429 answers are
//! retried with exponential backoff; malformed answers fail immediately.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use segpref_core::judge::prompt::render_reward_prompt;
use segpref_core::judge::{check_node_request, Judge, JudgeError, JudgeRequest, Judged, NodeIndicators, Rubric};
use segpref_core::rewards::{LcSubscores, SpatialClaim, VcSubscores};

use super::output;

pub const API_KEY_VAR: &str = "JUDGE_API_KEY";
pub const ENDPOINT_VAR: &str = "JUDGE_ENDPOINT";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Extra attempts after the first.
    pub retries: u32,
    pub backoff: Duration,
    /// Upper bound on requests in flight.
    pub concurrency: usize,
}

impl RemoteConfig {
    /// `JUDGE_ENDPOINT` wins over `endpoint`; the key comes only from
    /// `JUDGE_API_KEY`.
    pub fn from_env(endpoint: Option<&str>) -> Result<Self, String> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .ok()
            .filter(|e| !e.is_empty())
            .or_else(|| endpoint.map(str::to_string))
            .ok_or_else(|| format!("remote judge needs `{ENDPOINT_VAR}` or a configured endpoint"))?;
        Ok(RemoteConfig {
            endpoint,
            api_key: std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_millis(250),
            concurrency: 4,
        })
    }
}

#[derive(Serialize)]
struct RequestBody<'a> {
    prompt: String,
    task_id: &'a str,
    question: &'a str,
    ground_truth: Option<&'a str>,
    image_ref: &'a str,
    depth_ref: &'a str,
    rubric: Rubric,
    score_key: &'static str,
    response: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

struct Limiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_flight.lock().expect("limiter lock");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("limiter lock") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteJudge {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    limiter: Limiter,
}

enum Attempt {
    Retry(JudgeError),
    Fail(JudgeError),
}

impl RemoteJudge {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(cfg.timeout).build();
        let limiter = Limiter {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            max: cfg.concurrency.max(1),
        };
        RemoteJudge { cfg, agent, limiter }
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let mut call = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.cfg.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        match call
            .set("Content-Type", "application/json")
            .send_string(&body.to_string())
        {
            Ok(resp) => resp.into_string().map_err(|e| {
                Attempt::Retry(JudgeError::Unavailable {
                    detail: format!("reading response: {e}"),
                })
            }),
            Err(ureq::Error::Status(code, resp)) => {
                let detail = format!("HTTP {code}: {}", resp.into_string().unwrap_or_default());
                let err = JudgeError::Unavailable { detail };
                if code == 429 || code >= 500 {
                    Err(Attempt::Retry(err))
                } else {
                    Err(Attempt::Fail(err))
                }
            }
            Err(ureq::Error::Transport(t)) => {
                let detail = t.to_string();
                if detail.contains("timed out") || detail.contains("WouldBlock") {
                    Err(Attempt::Retry(JudgeError::Timeout { detail }))
                } else {
                    Err(Attempt::Retry(JudgeError::Unavailable { detail }))
                }
            }
        }
    }

    /// Raw judge text for one rubric call.
    fn call(&self, req: &JudgeRequest, model: Option<&str>) -> Result<String, JudgeError> {
        let body = RequestBody {
            prompt: render_reward_prompt(&req.question, req.ground_truth.as_deref()),
            task_id: &req.task_id,
            question: &req.question,
            ground_truth: req.ground_truth.as_deref(),
            image_ref: &req.image_ref,
            depth_ref: &req.depth_ref,
            rubric: req.rubric,
            score_key: req.rubric.score_key(),
            response: &req.payload_text,
            model,
        };
        let body = serde_json::to_value(&body).expect("request body serializes");
        let _slot = self.limiter.acquire();
        let mut delay = self.cfg.backoff;
        let mut last = None;
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(unwrap_envelope(text, req.rubric)),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(e)) => last = Some(e),
            }
        }
        Err(last.unwrap_or(JudgeError::Unavailable {
            detail: "no attempt was made".into(),
        }))
    }
}

/// Services often wrap the model's text in `{"output": "..."}`; use the inner
/// text when the keyed object is only found there.
fn unwrap_envelope(body: String, rubric: Rubric) -> String {
    if output::keyed_object(&body, rubric.score_key()).is_some() {
        return body;
    }
    if let Ok(Value::Object(m)) = serde_json::from_str::<Value>(&body) {
        for field in ["output", "content", "text", "completion"] {
            if let Some(Value::String(s)) = m.get(field) {
                return s.clone();
            }
        }
    }
    body
}

impl Judge for RemoteJudge {
    fn judge_description(&self, req: &JudgeRequest) -> Result<Judged<VcSubscores>, JudgeError> {
        req.expect_rubric(&[Rubric::Description])?;
        let text = self.call(req, None)?;
        Ok(Judged {
            value: output::parse_description(&text)?,
            payload: text,
        })
    }

    fn judge_spatial_claims(&self, req: &JudgeRequest) -> Result<Judged<Vec<SpatialClaim>>, JudgeError> {
        req.expect_rubric(&[Rubric::SpatialDesc, Rubric::SpatialReason])?;
        let text = self.call(req, None)?;
        Ok(Judged {
            value: output::parse_claims(&text, req.rubric)?,
            payload: text,
        })
    }

    fn judge_reasoning(&self, req: &JudgeRequest) -> Result<Judged<LcSubscores>, JudgeError> {
        req.expect_rubric(&[Rubric::Reasoning])?;
        let text = self.call(req, None)?;
        Ok(Judged {
            value: output::parse_reasoning(&text)?,
            payload: text,
        })
    }

    fn judge_node(&self, req: &JudgeRequest, models: &[String]) -> Result<Vec<NodeIndicators>, JudgeError> {
        check_node_request(req, models)?;
        models
            .iter()
            .map(|m| output::parse_node(&self.call(req, Some(m))?, m))
            .collect()
    }
}
