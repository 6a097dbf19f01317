//! Line schemas of the files passed between subcommands.

use serde::{Deserialize, Serialize};

use segpref_core::eval::{EvalSummary, ItemOutcome};
use segpref_core::fdpo::{BigramPolicy, PolicyError, Vocabulary};
use segpref_core::m3cts::SearchNode;
use segpref_core::pairgen::CandidateSource;
use segpref_core::rewards::JudgePayloads;
use segpref_core::{LongCoTResponse, SegmentScores};

/// Raw response text, as produced by a generator or by `search`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRecord {
    pub id: String,
    pub task_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<CandidateSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParsedRecord {
    pub id: String,
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<CandidateSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<u8>,
    pub response: LongCoTResponse,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredRecord {
    pub id: String,
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<CandidateSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<u8>,
    pub response: LongCoTResponse,
    pub scores: SegmentScores,
    pub payloads: JudgePayloads,
    pub empty_desc_claims: bool,
    pub empty_reason_claims: bool,
}

/// A final answer to evaluate against the task's ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub task_id: String,
    /// A full response or just the answer sentence.
    pub prediction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub outcomes: Vec<ItemOutcome>,
}

/// A trained bigram policy on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub vocabulary: Vocabulary,
    pub contexts: usize,
    pub params: Vec<f64>,
}

impl PolicyFile {
    pub fn from_policy(p: &BigramPolicy) -> Self {
        use segpref_core::fdpo::PolicyModel;
        PolicyFile {
            vocabulary: (**p.vocabulary()).clone(),
            contexts: p.contexts(),
            params: p.params().to_vec(),
        }
    }

    pub fn into_policy(self) -> Result<BigramPolicy, PolicyError> {
        BigramPolicy::from_params(std::sync::Arc::new(self.vocabulary), self.contexts, self.params)
    }
}

/// One search node, tagged with its task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeRecord<'a> {
    pub task_id: &'a str,
    #[serde(flatten)]
    pub node: &'a SearchNode,
}
