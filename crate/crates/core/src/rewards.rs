//! Fine-grained rewards.
//!
//! Four scalar rewards, each on `[0, 4]`:
//!
//! - visual consistency `r_vc`: sum of four description sub-scores;
//! - spatial `r_sp_desc` / `r_sp_reason`: `4 · mean(W_u · W_c · r)` over the
//!   spatial claims of one segment;
//! - logical coherence `r_lc`: sum of four reasoning sub-scores.
//!
//! They combine into `score_desc = r_vc + r_sp_desc` and
//! `score_reason = r_lc + r_sp_reason`, both on `[0, 8]`.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::judge::{Judge, JudgeError, JudgeRequest, Rubric};
use crate::longcot::{LongCoTResponse, Segment};
use crate::task::TaskInstance;

pub const MAX_REWARD: f64 = 4.0;
pub const MAX_COMPOSITE: f64 = 8.0;

pub const CONTEXT_WEIGHT_ASKED: f64 = 1.0;
pub const CONTEXT_WEIGHT_AUXILIARY: f64 = 0.8;
pub const MIN_UNCERTAINTY_WEIGHT: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("{field} = {value} is outside {range}")]
    OutOfRange {
        field: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("composite {field} does not equal the sum of its rewards")]
    CompositeMismatch { field: &'static str },
}

fn unit_interval(field: &'static str, value: f64) -> Result<f64, RewardError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(RewardError::OutOfRange {
            field,
            value,
            range: "[0, 1]",
        })
    }
}

/// Description sub-scores, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VcSubscores {
    pub existence: f64,
    pub attribute_accuracy: f64,
    pub completeness: f64,
    pub appropriateness: f64,
}

impl VcSubscores {
    pub fn new(existence: f64, attribute_accuracy: f64, completeness: f64, appropriateness: f64) -> Self {
        Self {
            existence,
            attribute_accuracy,
            completeness,
            appropriateness,
        }
    }

    pub fn components(&self) -> [(&'static str, f64); 4] {
        [
            ("existence", self.existence),
            ("attribute_accuracy", self.attribute_accuracy),
            ("completeness", self.completeness),
            ("appropriateness", self.appropriateness),
        ]
    }
}

/// Reasoning sub-scores, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LcSubscores {
    pub factual_consistency: f64,
    pub logical_coherence: f64,
    pub rule_application: f64,
    pub conclusion_validity: f64,
}

impl LcSubscores {
    pub fn new(
        factual_consistency: f64,
        logical_coherence: f64,
        rule_application: f64,
        conclusion_validity: f64,
    ) -> Self {
        Self {
            factual_consistency,
            logical_coherence,
            rule_application,
            conclusion_validity,
        }
    }

    pub fn components(&self) -> [(&'static str, f64); 4] {
        [
            ("factual_consistency", self.factual_consistency),
            ("logical_coherence", self.logical_coherence),
            ("rule_application", self.rule_application),
            ("conclusion_validity", self.conclusion_validity),
        ]
    }
}

/// One judged spatial statement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialClaim {
    pub text: String,
    /// `r_i` in `[0, 1]`.
    pub correctness: f64,
    /// `W_u` in `[0.8, 1.0]`; below 1 for hedged statements.
    pub uncertainty_weight: f64,
    /// `W_c`: 1.0 for relations the question asks about, 0.8 otherwise.
    pub context_weight: f64,
    pub segment: Segment,
}

impl SpatialClaim {
    pub fn validate(&self) -> Result<(), RewardError> {
        unit_interval("correctness", self.correctness)?;
        if !(MIN_UNCERTAINTY_WEIGHT..=1.0).contains(&self.uncertainty_weight) {
            return Err(RewardError::OutOfRange {
                field: "uncertainty_weight",
                value: self.uncertainty_weight,
                range: "[0.8, 1.0]",
            });
        }
        if self.context_weight != CONTEXT_WEIGHT_ASKED && self.context_weight != CONTEXT_WEIGHT_AUXILIARY {
            return Err(RewardError::OutOfRange {
                field: "context_weight",
                value: self.context_weight,
                range: "{0.8, 1.0}",
            });
        }
        Ok(())
    }

    fn weighted(&self) -> f64 {
        self.uncertainty_weight * self.context_weight * self.correctness
    }
}

/// Result of [`aggregate_spatial`]. `empty` distinguishes "no claims" from
/// "every claim wrong"; both give 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialScore {
    pub value: f64,
    pub empty: bool,
}

pub fn aggregate_vc(s: &VcSubscores) -> Result<f64, RewardError> {
    sum_components(&s.components())
}

pub fn aggregate_lc(s: &LcSubscores) -> Result<f64, RewardError> {
    sum_components(&s.components())
}

fn sum_components(components: &[(&'static str, f64); 4]) -> Result<f64, RewardError> {
    let mut total = 0.0;
    for &(field, value) in components {
        total += unit_interval(field, value)?;
    }
    Ok(total)
}

/// `4 · (1/n) Σ W_u · W_c · r` over the claims belonging to `segment`.
///
/// The weighted terms are summed in ascending order, which makes the result
/// exactly invariant to claim order and keeps it monotone in every input.
pub fn aggregate_spatial(claims: &[SpatialClaim], segment: Segment) -> Result<SpatialScore, RewardError> {
    let mut terms = Vec::new();
    for claim in claims.iter().filter(|c| c.segment == segment) {
        claim.validate()?;
        terms.push(claim.weighted());
    }
    if terms.is_empty() {
        return Ok(SpatialScore {
            value: 0.0,
            empty: true,
        });
    }
    terms.sort_by(f64::total_cmp);
    let sum: f64 = terms.iter().sum();
    Ok(SpatialScore {
        value: MAX_REWARD * (sum / terms.len() as f64),
        empty: false,
    })
}

/// The four rewards and the two composites of one response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentScores {
    pub r_vc: f64,
    pub r_sp_desc: f64,
    pub r_sp_reason: f64,
    pub r_lc: f64,
    pub score_desc: f64,
    pub score_reason: f64,
}

impl SegmentScores {
    pub fn from_rewards(r_vc: f64, r_sp_desc: f64, r_sp_reason: f64, r_lc: f64) -> Result<Self, RewardError> {
        let scores = SegmentScores {
            r_vc,
            r_sp_desc,
            r_sp_reason,
            r_lc,
            score_desc: r_vc + r_sp_desc,
            score_reason: r_lc + r_sp_reason,
        };
        scores.validate()?;
        Ok(scores)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        for (field, value) in [
            ("r_vc", self.r_vc),
            ("r_sp_desc", self.r_sp_desc),
            ("r_sp_reason", self.r_sp_reason),
            ("r_lc", self.r_lc),
        ] {
            if !(0.0..=MAX_REWARD).contains(&value) {
                return Err(RewardError::OutOfRange {
                    field,
                    value,
                    range: "[0, 4]",
                });
            }
        }
        if self.score_desc != self.r_vc + self.r_sp_desc {
            return Err(RewardError::CompositeMismatch { field: "score_desc" });
        }
        if self.score_reason != self.r_lc + self.r_sp_reason {
            return Err(RewardError::CompositeMismatch { field: "score_reason" });
        }
        Ok(())
    }

    pub fn segment_score(&self, segment: Segment) -> f64 {
        match segment {
            Segment::Desc => self.score_desc,
            Segment::Reason => self.score_reason,
        }
    }

    /// `score_desc + score_reason`, the ranking key for candidate pools.
    pub fn total(&self) -> f64 {
        self.score_desc + self.score_reason
    }
}

/// Raw judge outputs kept next to the scores they produced.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgePayloads {
    pub description: String,
    pub spatial_desc: String,
    pub spatial_reason: String,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredResponse {
    pub scores: SegmentScores,
    pub payloads: JudgePayloads,
    pub empty_desc_claims: bool,
    pub empty_reason_claims: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("{rubric} judge output rejected: {source}")]
    OutOfRange {
        rubric: Rubric,
        #[source]
        source: RewardError,
        payload: String,
    },
}

impl ScoreError {
    pub fn payload(&self) -> Option<&str> {
        match self {
            ScoreError::Judge(e) => e.payload(),
            ScoreError::OutOfRange { payload, .. } => Some(payload),
        }
    }
}

fn reject(rubric: Rubric, payload: &str) -> impl FnOnce(RewardError) -> ScoreError + '_ {
    move |source| ScoreError::OutOfRange {
        rubric,
        source,
        payload: payload.into(),
    }
}

/// Runs the four rubric calls for one response and aggregates them.
///
/// Every rubric receives the full response text; the judge reads the section
/// it is asked about.
pub fn score_response(
    task: &TaskInstance,
    resp: &LongCoTResponse,
    judge: &(impl Judge + ?Sized),
) -> Result<ScoredResponse, ScoreError> {
    let request = |rubric| JudgeRequest::for_task(task, rubric, &resp.raw_text);

    let vc = judge.judge_description(&request(Rubric::Description))?;
    let sp_desc = judge.judge_spatial_claims(&request(Rubric::SpatialDesc))?;
    let sp_reason = judge.judge_spatial_claims(&request(Rubric::SpatialReason))?;
    let lc = judge.judge_reasoning(&request(Rubric::Reasoning))?;

    let r_vc = aggregate_vc(&vc.value).map_err(reject(Rubric::Description, &vc.payload))?;
    let r_sp_desc =
        aggregate_spatial(&sp_desc.value, Segment::Desc).map_err(reject(Rubric::SpatialDesc, &sp_desc.payload))?;
    let r_sp_reason = aggregate_spatial(&sp_reason.value, Segment::Reason)
        .map_err(reject(Rubric::SpatialReason, &sp_reason.payload))?;
    let r_lc = aggregate_lc(&lc.value).map_err(reject(Rubric::Reasoning, &lc.payload))?;

    let scores = SegmentScores::from_rewards(r_vc, r_sp_desc.value, r_sp_reason.value, r_lc)
        .map_err(reject(Rubric::Reasoning, &lc.payload))?;
    Ok(ScoredResponse {
        scores,
        payloads: JudgePayloads {
            description: vc.payload,
            spatial_desc: sp_desc.payload,
            spatial_reason: sp_reason.payload,
            reasoning: lc.payload,
        },
        empty_desc_claims: r_sp_desc.empty,
        empty_reason_claims: r_sp_reason.empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn claim(r: f64, wu: f64, wc: f64, segment: Segment) -> SpatialClaim {
        SpatialClaim {
            text: "x".to_string(),
            correctness: r,
            uncertainty_weight: wu,
            context_weight: wc,
            segment,
        }
    }

    #[test]
    fn vc_and_lc_sums() {
        assert_eq!(aggregate_vc(&VcSubscores::new(1.0, 1.0, 1.0, 1.0)), Ok(4.0));
        assert_eq!(aggregate_vc(&VcSubscores::new(0.0, 0.0, 0.0, 0.0)), Ok(0.0));
        let v = aggregate_vc(&VcSubscores::new(0.9, 0.7, 0.5, 1.0)).unwrap();
        assert!((v - 3.1).abs() < 1e-12);
        assert_eq!(aggregate_lc(&LcSubscores::new(1.0, 1.0, 1.0, 1.0)), Ok(4.0));
        assert_eq!(aggregate_lc(&LcSubscores::new(0.5, 0.5, 0.5, 0.5)), Ok(2.0));
        assert_eq!(aggregate_lc(&LcSubscores::new(0.0, 1.0, 1.0, 0.0)), Ok(2.0));
    }

    #[test]
    fn out_of_range_components() {
        let err = aggregate_vc(&VcSubscores::new(1.2, 1.0, 1.0, 1.0)).unwrap_err();
        assert!(matches!(err, RewardError::OutOfRange { field: "existence", .. }));
        assert!(aggregate_lc(&LcSubscores::new(0.5, f64::NAN, 0.5, 0.5)).is_err());
    }

    #[test]
    fn spatial_two_claim_fixture() {
        let claims = vec![
            claim(1.0, 1.0, 1.0, Segment::Desc),
            claim(1.0, 0.8, 0.8, Segment::Desc),
            claim(0.0, 1.0, 1.0, Segment::Reason),
        ];
        let s = aggregate_spatial(&claims, Segment::Desc).unwrap();
        assert!((s.value - 3.28).abs() < 1e-12);
        assert!(!s.empty);
        let s = aggregate_spatial(&claims, Segment::Reason).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(!s.empty);
    }

    #[test]
    fn spatial_extremes_and_empty() {
        let perfect = vec![claim(1.0, 1.0, 1.0, Segment::Reason); 5];
        assert_eq!(aggregate_spatial(&perfect, Segment::Reason).unwrap().value, 4.0);
        let empty = aggregate_spatial(&[], Segment::Desc).unwrap();
        assert_eq!(
            empty,
            SpatialScore {
                value: 0.0,
                empty: true
            }
        );
    }

    #[test]
    fn spatial_weight_validation() {
        for bad in [
            claim(1.0, 0.7, 1.0, Segment::Desc),
            claim(1.0, 1.0, 0.9, Segment::Desc),
            claim(1.5, 1.0, 1.0, Segment::Desc),
        ] {
            assert!(aggregate_spatial(&[bad], Segment::Desc).is_err());
        }
        // claims of the other segment are not inspected
        let other = claim(1.0, 0.5, 1.0, Segment::Reason);
        assert!(aggregate_spatial(&[other], Segment::Desc).is_ok());
    }

    #[test]
    fn composites() {
        let s = SegmentScores::from_rewards(4.0, 4.0, 4.0, 4.0).unwrap();
        assert_eq!((s.score_desc, s.score_reason), (8.0, 8.0));
        assert_eq!(s.total(), 16.0);
        assert!(SegmentScores::from_rewards(4.1, 0.0, 0.0, 0.0).is_err());
        let mut s = SegmentScores::from_rewards(1.0, 2.0, 3.0, 0.5).unwrap();
        s.score_reason += 1e-9;
        assert_eq!(
            s.validate(),
            Err(RewardError::CompositeMismatch { field: "score_reason" })
        );
    }
}
