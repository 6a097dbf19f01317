//! Fixture store of recorded judge outputs.
//!
//! A store is a directory of JSONL files. Each line maps
//! `(task_id, rubric, sha256(payload_text), model)` to the raw judge output,
//! which is parsed exactly as a remote answer would be.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use segpref_core::judge::{check_node_request, Judge, JudgeError, JudgeRequest, Judged, NodeIndicators, Rubric};
use segpref_core::rewards::{LcSubscores, SpatialClaim, VcSubscores};
use segpref_core::sha256_hex;

use super::output;
use crate::io::{self, InputError};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayRecord {
    pub task_id: String,
    pub rubric: Rubric,
    pub payload_sha256: String,
    /// Evaluator model; only node records carry one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub output: String,
}

type Key = (String, Rubric, String, Option<String>);

fn key_of(req: &JudgeRequest, model: Option<&str>) -> Key {
    (
        req.task_id.clone(),
        req.rubric,
        sha256_hex(req.payload_text.as_bytes()),
        model.map(str::to_string),
    )
}

#[derive(Debug, Clone, Default)]
pub struct ReplayJudge {
    outputs: BTreeMap<Key, String>,
}

impl ReplayJudge {
    /// Identical duplicates are fine; conflicting ones are an error.
    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>) -> Result<Self, String> {
        let mut judge = ReplayJudge::default();
        for r in records {
            judge.insert(r)?;
        }
        Ok(judge)
    }

    fn insert(&mut self, r: ReplayRecord) -> Result<(), String> {
        let key = (r.task_id, r.rubric, r.payload_sha256, r.model);
        match self.outputs.get(&key) {
            Some(prev) if *prev != r.output => Err(format!(
                "conflicting replay records for task `{}`, rubric `{}`",
                key.0, key.1
            )),
            Some(_) => Ok(()),
            None => {
                self.outputs.insert(key, r.output);
                Ok(())
            }
        }
    }

    /// Loads every `*.jsonl` file in `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self, InputError> {
        let entries = std::fs::read_dir(dir).map_err(|source| InputError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut files: Vec<_> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        let mut judge = ReplayJudge::default();
        for f in &files {
            let text = std::fs::read_to_string(f).map_err(|source| InputError::Io {
                path: f.clone(),
                source,
            })?;
            let records = io::parse_jsonl::<ReplayRecord>(&text, f)?;
            let lines = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, _)| i + 1);
            for (r, line) in records.into_iter().zip(lines) {
                judge.insert(r).map_err(|detail| InputError::SchemaViolation {
                    path: f.clone(),
                    line,
                    detail,
                })?;
            }
        }
        Ok(judge)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    fn lookup(&self, req: &JudgeRequest, model: Option<&str>) -> Result<&str, JudgeError> {
        self.outputs
            .get(&key_of(req, model))
            .map(String::as_str)
            .ok_or_else(|| JudgeError::Unavailable {
                detail: format!(
                    "no replay record for task `{}`, rubric `{}`{}",
                    req.task_id,
                    req.rubric,
                    model.map(|m| format!(", model `{m}`")).unwrap_or_default()
                ),
            })
    }
}

impl Judge for ReplayJudge {
    fn judge_description(&self, req: &JudgeRequest) -> Result<Judged<VcSubscores>, JudgeError> {
        req.expect_rubric(&[Rubric::Description])?;
        let text = self.lookup(req, None)?;
        Ok(Judged {
            value: output::parse_description(text)?,
            payload: text.to_string(),
        })
    }

    fn judge_spatial_claims(&self, req: &JudgeRequest) -> Result<Judged<Vec<SpatialClaim>>, JudgeError> {
        req.expect_rubric(&[Rubric::SpatialDesc, Rubric::SpatialReason])?;
        let text = self.lookup(req, None)?;
        Ok(Judged {
            value: output::parse_claims(text, req.rubric)?,
            payload: text.to_string(),
        })
    }

    fn judge_reasoning(&self, req: &JudgeRequest) -> Result<Judged<LcSubscores>, JudgeError> {
        req.expect_rubric(&[Rubric::Reasoning])?;
        let text = self.lookup(req, None)?;
        Ok(Judged {
            value: output::parse_reasoning(text)?,
            payload: text.to_string(),
        })
    }

    fn judge_node(&self, req: &JudgeRequest, models: &[String]) -> Result<Vec<NodeIndicators>, JudgeError> {
        check_node_request(req, models)?;
        models
            .iter()
            .map(|m| output::parse_node(self.lookup(req, Some(m))?, m))
            .collect()
    }
}

/// Passes calls through to `inner` and keeps every successful output as a
/// [`ReplayRecord`].
pub struct RecordingJudge<J> {
    inner: J,
    records: Mutex<Vec<ReplayRecord>>,
}

impl<J: Judge> RecordingJudge<J> {
    pub fn new(inner: J) -> Self {
        RecordingJudge {
            inner,
            records: Mutex::new(Vec::new()),
        }
    }

    fn keep(&self, req: &JudgeRequest, model: Option<&str>, output: &str) {
        let (task_id, rubric, payload_sha256, model) = key_of(req, model);
        self.records.lock().expect("recording lock").push(ReplayRecord {
            task_id,
            rubric,
            payload_sha256,
            model,
            output: output.to_string(),
        });
    }

    /// Sorted and deduplicated.
    pub fn records(&self) -> Vec<ReplayRecord> {
        let mut out = self.records.lock().expect("recording lock").clone();
        out.sort();
        out.dedup();
        out
    }

    /// Writes one `<task>.jsonl` file per task into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), InputError> {
        let mut by_task: BTreeMap<String, Vec<ReplayRecord>> = BTreeMap::new();
        for r in self.records() {
            by_task.entry(r.task_id.clone()).or_default().push(r);
        }
        for (task, records) in by_task {
            let name: String = task
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            let file = format!("{name}-{}.jsonl", &sha256_hex(task.as_bytes())[..8]);
            io::write_jsonl(&dir.join(file), &records)?;
        }
        Ok(())
    }
}

impl<J: Judge> Judge for RecordingJudge<J> {
    fn judge_description(&self, req: &JudgeRequest) -> Result<Judged<VcSubscores>, JudgeError> {
        let out = self.inner.judge_description(req)?;
        self.keep(req, None, &out.payload);
        Ok(out)
    }

    fn judge_spatial_claims(&self, req: &JudgeRequest) -> Result<Judged<Vec<SpatialClaim>>, JudgeError> {
        let out = self.inner.judge_spatial_claims(req)?;
        self.keep(req, None, &out.payload);
        Ok(out)
    }

    fn judge_reasoning(&self, req: &JudgeRequest) -> Result<Judged<LcSubscores>, JudgeError> {
        let out = self.inner.judge_reasoning(req)?;
        self.keep(req, None, &out.payload);
        Ok(out)
    }

    fn judge_node(&self, req: &JudgeRequest, models: &[String]) -> Result<Vec<NodeIndicators>, JudgeError> {
        let out = self.inner.judge_node(req, models)?;
        for ind in &out {
            self.keep(req, Some(&ind.model_id), &output::render_node(ind));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use segpref_core::TaskInstance;

    fn record(rubric: Rubric, payload: &str, output: &str) -> ReplayRecord {
        ReplayRecord {
            task_id: "t".into(),
            rubric,
            payload_sha256: sha256_hex(payload.as_bytes()),
            model: None,
            output: output.into(),
        }
    }

    #[test]
    fn replays_recorded_outputs() {
        let judge = ReplayJudge::from_records([
            record(Rubric::Description, "doc", r#"{"task1_score": 3.1, "existence": 0.9, "attribute_accuracy": 0.7, "completeness": 0.5, "appropriateness": 1.0}"#),
            record(Rubric::Reasoning, "doc", r#"{"task4_score": 2.0}"#),
        ])
        .unwrap();
        let task = TaskInstance::new("t", "q");
        let vc = judge
            .judge_description(&JudgeRequest::for_task(&task, Rubric::Description, "doc"))
            .unwrap();
        assert_eq!(vc.value, VcSubscores::new(0.9, 0.7, 0.5, 1.0));
        let lc = judge
            .judge_reasoning(&JudgeRequest::for_task(&task, Rubric::Reasoning, "doc"))
            .unwrap();
        assert_eq!(lc.value, LcSubscores::new(0.5, 0.5, 0.5, 0.5));
        let missing = judge.judge_reasoning(&JudgeRequest::for_task(&task, Rubric::Reasoning, "other"));
        assert!(matches!(missing, Err(JudgeError::Unavailable { .. })));
    }

    #[test]
    fn conflicting_records_are_rejected() {
        let a = record(Rubric::Reasoning, "doc", r#"{"task4_score": 2.0}"#);
        let b = record(Rubric::Reasoning, "doc", r#"{"task4_score": 3.0}"#);
        assert!(ReplayJudge::from_records([a.clone(), a.clone()]).is_ok());
        assert!(ReplayJudge::from_records([a, b]).is_err());
    }
}
