//! Success metrics for final answers.
//!
//! Quantitative answers pass when the predicted length is within 25% of the
//! ground truth (both in meters). Qualitative answers pass when the set of
//! categorical keywords in the prediction equals the set in the truth.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::longcot::{self, extract_lengths, ParseOptions};

/// Relative error allowed for quantitative answers.
pub const TOLERANCE: f64 = 0.25;

/// Categorical answer words. Multi-word entries are matched as phrases.
pub const KEYWORDS: &[&str] = &[
    "yes", "no", "left", "right", "above", "below", "behind", "in front", "taller", "shorter", "higher", "lower",
    "larger", "smaller", "bigger", "wider", "narrower", "thicker", "thinner", "closer", "farther",
];

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("ground truth must be positive, got {0}")]
    NonPositiveTruth(f64),
    #[error("prediction is not finite: {0}")]
    NonFinitePrediction(f64),
}

/// `|pred - truth| / truth <= 0.25`.
pub fn eval_quantitative(pred: f64, truth: f64) -> Result<bool, EvalError> {
    if truth <= 0.0 || !truth.is_finite() {
        return Err(EvalError::NonPositiveTruth(truth));
    }
    if !pred.is_finite() {
        return Err(EvalError::NonFinitePrediction(pred));
    }
    Ok((pred - truth).abs() / truth <= TOLERANCE)
}

/// Lenient form of [`eval_quantitative`]: invalid inputs count as a miss.
pub fn within_tolerance(pred: f64, truth: f64) -> bool {
    eval_quantitative(pred, truth).unwrap_or(false)
}

pub fn conclusion_keywords(text: &str) -> BTreeSet<String> {
    let lower = text.to_lowercase();
    KEYWORDS
        .iter()
        .filter(|k| crate::text::contains_phrase(&lower, k))
        .map(|k| k.to_string())
        .collect()
}

/// Exact match on the keyword sets; two keyword-free answers never match.
pub fn eval_qualitative(pred: &str, truth: &str) -> bool {
    let p = conclusion_keywords(pred);
    !p.is_empty() && p == conclusion_keywords(truth)
}

/// The conclusion of a structured answer, or the whole text otherwise.
pub fn answer_text(prediction: &str) -> String {
    match longcot::parse_with(prediction, ParseOptions::LENIENT) {
        Ok((resp, _)) => resp.conclusion,
        Err(_) => prediction.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Quantitative,
    Qualitative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub task_id: String,
    pub kind: AnswerKind,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_m: Option<f64>,
}

/// Scores one prediction. A truth holding a length makes the item
/// quantitative; the last length of the answer is the prediction.
pub fn evaluate_item(task_id: &str, prediction: &str, truth: &str) -> ItemOutcome {
    let answer = answer_text(prediction);
    let truth_m = extract_lengths(truth).last().map(|v| v.numeric_value);
    match truth_m {
        Some(t) => {
            let pred_m = extract_lengths(&answer).last().map(|v| v.numeric_value);
            ItemOutcome {
                task_id: task_id.to_string(),
                kind: AnswerKind::Quantitative,
                success: pred_m.is_some_and(|p| within_tolerance(p, t)),
                pred_m,
                truth_m,
            }
        }
        None => ItemOutcome {
            task_id: task_id.to_string(),
            kind: AnswerKind::Qualitative,
            success: eval_qualitative(&answer, truth),
            pred_m: None,
            truth_m: None,
        },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub quantitative_total: usize,
    pub quantitative_success: usize,
    pub qualitative_total: usize,
    pub qualitative_success: usize,
    pub quantitative_rate: f64,
    pub qualitative_rate: f64,
}

pub fn summarize(outcomes: &[ItemOutcome]) -> EvalSummary {
    let mut s = EvalSummary::default();
    for o in outcomes {
        let (total, ok) = match o.kind {
            AnswerKind::Quantitative => (&mut s.quantitative_total, &mut s.quantitative_success),
            AnswerKind::Qualitative => (&mut s.qualitative_total, &mut s.qualitative_success),
        };
        *total += 1;
        *ok += usize::from(o.success);
    }
    let rate = |ok: usize, n: usize| if n == 0 { 0.0 } else { ok as f64 / n as f64 };
    s.quantitative_rate = rate(s.quantitative_success, s.quantitative_total);
    s.qualitative_rate = rate(s.qualitative_success, s.qualitative_total);
    s
}

pub fn evaluate_all<'a>(
    items: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
) -> (Vec<ItemOutcome>, EvalSummary) {
    let outcomes: Vec<ItemOutcome> = items
        .into_iter()
        .map(|(id, pred, truth)| evaluate_item(id, pred, truth))
        .collect();
    let summary = summarize(&outcomes);
    (outcomes, summary)
}
