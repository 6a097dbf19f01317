//! Judge contract.
//!
//! A judge turns a rubric request into typed scores. Backends:
//! [`mock::MockJudge`] here (rule tables, deterministic), plus replay and
//! remote backends in the `segpref` crate.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::rewards::{LcSubscores, SpatialClaim, VcSubscores};
use crate::task::TaskInstance;

pub mod mock;
pub mod prompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rubric {
    Description,
    SpatialDesc,
    SpatialReason,
    Reasoning,
    Node,
}

impl Rubric {
    pub fn as_str(self) -> &'static str {
        match self {
            Rubric::Description => "description",
            Rubric::SpatialDesc => "spatial_desc",
            Rubric::SpatialReason => "spatial_reason",
            Rubric::Reasoning => "reasoning",
            Rubric::Node => "node",
        }
    }

    /// The keyed field the judge's answer must carry for this rubric.
    pub fn score_key(self) -> &'static str {
        match self {
            Rubric::Description => "task1_score",
            Rubric::SpatialDesc => "task2_claim_score",
            Rubric::SpatialReason => "task3_claim_score",
            Rubric::Reasoning => "task4_score",
            Rubric::Node => "indicators",
        }
    }
}

impl fmt::Display for Rubric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub task_id: String,
    pub image_ref: String,
    pub depth_ref: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    pub payload_text: String,
    pub rubric: Rubric,
}

impl JudgeRequest {
    pub fn for_task(task: &TaskInstance, rubric: Rubric, payload: &str) -> Self {
        JudgeRequest {
            task_id: task.task_id.clone(),
            image_ref: task.image_ref.clone(),
            depth_ref: task.depth_ref.clone(),
            question: task.question.clone(),
            ground_truth: task.ground_truth.clone(),
            payload_text: payload.to_string(),
            rubric,
        }
    }

    pub fn expect_rubric(&self, allowed: &[Rubric]) -> Result<(), JudgeError> {
        if allowed.contains(&self.rubric) {
            Ok(())
        } else {
            Err(JudgeError::Precondition(alloc::format!(
                "rubric `{}` not accepted here",
                self.rubric
            )))
        }
    }
}

/// A typed judge result and the raw output it was read from.
#[derive(Debug, Clone, PartialEq)]
pub struct Judged<T> {
    pub value: T,
    pub payload: String,
}

/// Per-model node verdicts, each in `{-1, 0, +1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeIndicators {
    pub visual: i8,
    pub spatial: i8,
    pub logical: i8,
    pub model_id: String,
}

impl NodeIndicators {
    pub fn new(model_id: impl Into<String>, visual: i8, spatial: i8, logical: i8) -> Result<Self, JudgeError> {
        let ind = NodeIndicators {
            visual,
            spatial,
            logical,
            model_id: model_id.into(),
        };
        ind.validate()?;
        Ok(ind)
    }

    pub fn validate(&self) -> Result<(), JudgeError> {
        for v in [self.visual, self.spatial, self.logical] {
            if !(-1..=1).contains(&v) {
                return Err(JudgeError::Malformed {
                    detail: alloc::format!("indicator {v} is not one of -1, 0, 1"),
                    payload: String::new(),
                });
            }
        }
        Ok(())
    }

    pub fn sum(&self) -> i32 {
        i32::from(self.visual) + i32::from(self.spatial) + i32::from(self.logical)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JudgeError {
    #[error("judge unavailable: {detail}")]
    Unavailable { detail: String },
    #[error("malformed judge output: {detail}")]
    Malformed { detail: String, payload: String },
    #[error("judge timed out: {detail}")]
    Timeout { detail: String },
    #[error("judge precondition failed: {0}")]
    Precondition(String),
}

impl JudgeError {
    pub fn payload(&self) -> Option<&str> {
        match self {
            JudgeError::Malformed { payload, .. } => Some(payload),
            _ => None,
        }
    }

    /// Transport-level failures as opposed to bad input.
    pub fn is_external(&self) -> bool {
        matches!(self, JudgeError::Unavailable { .. } | JudgeError::Timeout { .. })
    }
}

pub trait Judge {
    fn judge_description(&self, req: &JudgeRequest) -> Result<Judged<VcSubscores>, JudgeError>;

    /// One claim per spatial statement, tagged with the segment the rubric
    /// names.
    fn judge_spatial_claims(&self, req: &JudgeRequest) -> Result<Judged<Vec<SpatialClaim>>, JudgeError>;

    fn judge_reasoning(&self, req: &JudgeRequest) -> Result<Judged<LcSubscores>, JudgeError>;

    /// One verdict per evaluator model, in `models` order.
    fn judge_node(&self, req: &JudgeRequest, models: &[String]) -> Result<Vec<NodeIndicators>, JudgeError>;
}

impl<J: Judge + ?Sized> Judge for &J {
    fn judge_description(&self, req: &JudgeRequest) -> Result<Judged<VcSubscores>, JudgeError> {
        (**self).judge_description(req)
    }
    fn judge_spatial_claims(&self, req: &JudgeRequest) -> Result<Judged<Vec<SpatialClaim>>, JudgeError> {
        (**self).judge_spatial_claims(req)
    }
    fn judge_reasoning(&self, req: &JudgeRequest) -> Result<Judged<LcSubscores>, JudgeError> {
        (**self).judge_reasoning(req)
    }
    fn judge_node(&self, req: &JudgeRequest, models: &[String]) -> Result<Vec<NodeIndicators>, JudgeError> {
        (**self).judge_node(req, models)
    }
}

/// Checks node-rubric preconditions shared by every backend.
pub fn check_node_request(req: &JudgeRequest, models: &[String]) -> Result<(), JudgeError> {
    req.expect_rubric(&[Rubric::Node])?;
    if models.is_empty() {
        return Err(JudgeError::Precondition(
            "node evaluation needs at least one model".to_string(),
        ));
    }
    Ok(())
}
