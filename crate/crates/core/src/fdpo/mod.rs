//! Fine-grained DPO.
//!
//! Each preference pair carries the composite-score gaps of its two segments.
//! Those gaps set per-segment weights through a two-way softmax, the weights
//! set per-segment betas, and the loss is the usual logistic loss on the
//! beta-weighted sum of the segment log-ratio margins. With `alpha = 0` both
//! betas equal `beta` and the objective is plain DPO.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::longcot::{LongCoTResponse, Segment};
use crate::rewards::SegmentScores;
use crate::task::TaskInstance;

mod policy;
mod table;
mod train;

pub use policy::{
    BigramConfig, BigramEncoded, BigramGrad, BigramPolicy, PolicyError, PolicyModel, Vocabulary, BOS, MAX_VOCAB, UNK,
};
pub use table::{table_fdpo_loss, LogProbRecord, LogProbTable};
pub use train::{pairwise_accuracy, train, StepMetrics, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdpoConfig {
    pub beta: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    /// Pairs per gradient step; 0 means full batch.
    pub batch_size: usize,
}

impl Default for FdpoConfig {
    fn default() -> Self {
        FdpoConfig {
            beta: 0.1,
            alpha: 0.3,
            lambda: 0.6,
            learning_rate: 0.5,
            steps: 500,
            seed: 0,
            batch_size: 0,
        }
    }
}

impl FdpoConfig {
    pub fn validate(&self) -> Result<(), FdpoError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(FdpoError::InvalidConfig(alloc::format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(FdpoError::InvalidConfig(alloc::format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(FdpoError::NonPositiveLambda(self.lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FdpoError::InvalidConfig(alloc::format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FdpoError {
    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("preference differentials must be finite")]
    NonFiniteDelta,
    #[error("segment weights sum to {0}, expected 1")]
    WeightSumViolation(f64),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("pair `{pair_id}`: {source}")]
    Policy {
        pair_id: String,
        #[source]
        source: PolicyError,
    },
    #[error("policy and reference use different vocabularies")]
    VocabularyMismatch,
    #[error("pair `{pair_id}`: stored differentials do not match its scores")]
    DeltaMismatch { pair_id: String },
    #[error("no log-probabilities for pair `{pair_id}` segment {segment}")]
    MissingLogProb { pair_id: String, segment: Segment },
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOrigin {
    Selected,
    Perturbed,
}

/// One training example: a preferred and a dispreferred response to the same
/// task, with the scores and differentials fixed at construction time.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub pair_id: String,
    pub task: TaskInstance,
    pub positive: LongCoTResponse,
    pub negative: LongCoTResponse,
    pub scores_p: SegmentScores,
    pub scores_l: SegmentScores,
    pub delta_desc: f64,
    pub delta_reason: f64,
    pub origin: PairOrigin,
    pub flags: Vec<String>,
}

impl PreferencePair {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pair_id: impl Into<String>,
        task: TaskInstance,
        positive: LongCoTResponse,
        negative: LongCoTResponse,
        scores_p: SegmentScores,
        scores_l: SegmentScores,
        origin: PairOrigin,
    ) -> Self {
        let (delta_desc, delta_reason) = preference_differentials(&scores_p, &scores_l);
        PreferencePair {
            pair_id: pair_id.into(),
            task,
            positive,
            negative,
            scores_p,
            scores_l,
            delta_desc,
            delta_reason,
            origin,
            flags: Vec::new(),
        }
    }

    /// Stored differentials must equal the recomputed ones bit for bit.
    pub fn validate(&self) -> Result<(), FdpoError> {
        let (d, r) = preference_differentials(&self.scores_p, &self.scores_l);
        if d.to_bits() != self.delta_desc.to_bits() || r.to_bits() != self.delta_reason.to_bits() {
            return Err(FdpoError::DeltaMismatch {
                pair_id: self.pair_id.clone(),
            });
        }
        if !d.is_finite() || !r.is_finite() {
            return Err(FdpoError::NonFiniteDelta);
        }
        Ok(())
    }

    pub fn delta(&self, segment: Segment) -> f64 {
        match segment {
            Segment::Desc => self.delta_desc,
            Segment::Reason => self.delta_reason,
        }
    }

    /// `(beta_desc, beta_reason)` for this pair under `cfg`.
    pub fn betas(&self, cfg: &FdpoConfig) -> Result<(f64, f64), FdpoError> {
        let (wd, wr) = segment_weights(self.delta_desc, self.delta_reason, cfg.lambda)?;
        segment_betas(cfg.beta, cfg.alpha, wd, wr)
    }
}

/// `(score_desc(p) - score_desc(l), score_reason(p) - score_reason(l))`.
pub fn preference_differentials(scores_p: &SegmentScores, scores_l: &SegmentScores) -> (f64, f64) {
    (
        scores_p.score_desc - scores_l.score_desc,
        scores_p.score_reason - scores_l.score_reason,
    )
}

/// Two-way softmax of `lambda * delta`, evaluated with log-sum-exp.
pub fn segment_weights(delta_desc: f64, delta_reason: f64, lambda: f64) -> Result<(f64, f64), FdpoError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(FdpoError::NonPositiveLambda(lambda));
    }
    let (a, b) = (lambda * delta_desc, lambda * delta_reason);
    if !a.is_finite() || !b.is_finite() {
        return Err(FdpoError::NonFiniteDelta);
    }
    // Two-way softmax as a logistic of the gap, evaluated on the
    // non-positive side so exp never overflows.
    let e = libm::exp(-libm::fabs(a - b));
    let (hi, lo) = (1.0 / (1.0 + e), e / (1.0 + e));
    Ok(if a > b { (hi, lo) } else { (lo, hi) })
}

/// `beta_s = beta * (1 + alpha * (2 w_s - 1))`.
///
/// The larger beta is evaluated directly and the smaller one as `2 beta`
/// minus it. The subtraction is exact, so the two always sum to `2 beta`.
pub fn segment_betas(beta: f64, alpha: f64, w_desc: f64, w_reason: f64) -> Result<(f64, f64), FdpoError> {
    let sum = w_desc + w_reason;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(FdpoError::WeightSumViolation(sum));
    }
    if !(beta > 0.0 && beta.is_finite()) || !(0.0..=1.0).contains(&alpha) {
        return Err(FdpoError::InvalidConfig(alloc::format!(
            "need beta > 0 and alpha in [0, 1], got beta={beta}, alpha={alpha}"
        )));
    }
    let scaled = |w: f64| beta * (1.0 + alpha * (2.0 * w - 1.0));
    let total = 2.0 * beta;
    if w_desc >= w_reason {
        let bd = scaled(w_desc);
        Ok((bd, total - bd))
    } else {
        let br = scaled(w_reason);
        Ok((total - br, br))
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Per-pair loss `-log sigmoid(u)` and its derivative in `u`.
pub fn logistic_loss(u: f64) -> (f64, f64) {
    (softplus(-u), -sigmoid(-u))
}

/// Both responses of a pair, encoded once, plus the frozen reference
/// log-probabilities and the pair's betas.
#[derive(Debug, Clone)]
pub struct PreparedPair<E> {
    pub pair_id: String,
    pub positive: E,
    pub negative: E,
    /// Reference log-probs, indexed `[response][segment]`, positive first.
    pub reference: [[f64; 2]; 2],
    pub beta_desc: f64,
    pub beta_reason: f64,
}

fn seg_idx(segment: Segment) -> usize {
    match segment {
        Segment::Desc => 0,
        Segment::Reason => 1,
    }
}

pub fn prepare_pairs<P: PolicyModel>(
    pairs: &[PreferencePair],
    reference: &P,
    cfg: &FdpoConfig,
) -> Result<Vec<PreparedPair<P::Encoded>>, FdpoError> {
    pairs
        .iter()
        .map(|pair| {
            let wrap = |source| FdpoError::Policy {
                pair_id: pair.pair_id.clone(),
                source,
            };
            let positive = reference.encode(&pair.task, &pair.positive).map_err(wrap)?;
            let negative = reference.encode(&pair.task, &pair.negative).map_err(wrap)?;
            let mut refs = [[0.0; 2]; 2];
            for seg in Segment::BOTH {
                refs[0][seg_idx(seg)] = reference.segment_log_prob(&positive, seg);
                refs[1][seg_idx(seg)] = reference.segment_log_prob(&negative, seg);
            }
            let (beta_desc, beta_reason) = pair.betas(cfg)?;
            Ok(PreparedPair {
                pair_id: pair.pair_id.clone(),
                positive,
                negative,
                reference: refs,
                beta_desc,
                beta_reason,
            })
        })
        .collect()
}

impl<E> PreparedPair<E> {
    pub fn margin<P: PolicyModel<Encoded = E>>(&self, policy: &P, segment: Segment) -> f64 {
        let s = seg_idx(segment);
        (policy.segment_log_prob(&self.positive, segment) - self.reference[0][s])
            - (policy.segment_log_prob(&self.negative, segment) - self.reference[1][s])
    }

    fn beta(&self, segment: Segment) -> f64 {
        match segment {
            Segment::Desc => self.beta_desc,
            Segment::Reason => self.beta_reason,
        }
    }
}

/// Mean loss over prepared pairs and, when `want_grad`, its gradient.
pub fn prepared_loss<P: PolicyModel>(
    prepared: &[PreparedPair<P::Encoded>],
    policy: &P,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>), FdpoError> {
    loss_over(prepared.iter(), policy, want_grad)
}

pub(crate) fn loss_over<'a, P, I>(pairs: I, policy: &P, want_grad: bool) -> Result<(f64, Option<Vec<f64>>), FdpoError>
where
    P: PolicyModel,
    P::Encoded: 'a,
    I: ExactSizeIterator<Item = &'a PreparedPair<P::Encoded>>,
{
    if pairs.len() == 0 {
        return Err(FdpoError::EmptyBatch);
    }
    let n = pairs.len() as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| policy.new_grad());
    for pair in pairs {
        let u: f64 = Segment::BOTH
            .iter()
            .map(|&seg| pair.beta(seg) * pair.margin(policy, seg))
            .sum();
        let (loss, dloss_du) = logistic_loss(u);
        total += loss;
        if let Some(g) = grad.as_mut() {
            for seg in Segment::BOTH {
                let scale = dloss_du * pair.beta(seg) / n;
                policy.accumulate_segment_grad(&pair.positive, seg, scale, g);
                policy.accumulate_segment_grad(&pair.negative, seg, -scale, g);
            }
        }
    }
    Ok((total / n, grad.map(|g| policy.finish_grad(g))))
}

/// Segment margin: policy-vs-reference log-ratio of the positive minus that
/// of the negative, on one segment.
pub fn segment_margin<P: PolicyModel>(
    policy: &P,
    reference: &P,
    pair: &PreferencePair,
    segment: Segment,
) -> Result<f64, FdpoError> {
    if !policy.same_vocabulary(reference) {
        return Err(FdpoError::VocabularyMismatch);
    }
    let wrap = |source| FdpoError::Policy {
        pair_id: pair.pair_id.clone(),
        source,
    };
    let p = policy.encode(&pair.task, &pair.positive).map_err(wrap)?;
    let l = policy.encode(&pair.task, &pair.negative).map_err(wrap)?;
    Ok(
        (policy.segment_log_prob(&p, segment) - reference.segment_log_prob(&p, segment))
            - (policy.segment_log_prob(&l, segment) - reference.segment_log_prob(&l, segment)),
    )
}

/// Mean fDPO loss over `batch` and its gradient in the policy parameters.
pub fn fdpo_loss<P: PolicyModel>(
    batch: &[PreferencePair],
    policy: &P,
    reference: &P,
    cfg: &FdpoConfig,
) -> Result<(f64, Vec<f64>), FdpoError> {
    if batch.is_empty() {
        return Err(FdpoError::EmptyBatch);
    }
    if !policy.same_vocabulary(reference) {
        return Err(FdpoError::VocabularyMismatch);
    }
    let prepared = prepare_pairs(batch, reference, cfg)?;
    let (loss, grad) = prepared_loss(&prepared, policy, true)?;
    Ok((loss, grad.unwrap_or_default()))
}

/// Standard DPO on whole responses with one global beta.
pub fn dpo_loss<P: PolicyModel>(
    batch: &[PreferencePair],
    policy: &P,
    reference: &P,
    beta: f64,
) -> Result<f64, FdpoError> {
    if batch.is_empty() {
        return Err(FdpoError::EmptyBatch);
    }
    let mut total = 0.0;
    for pair in batch {
        let wrap = |source| FdpoError::Policy {
            pair_id: pair.pair_id.clone(),
            source,
        };
        let p = policy.encode(&pair.task, &pair.positive).map_err(wrap)?;
        let l = policy.encode(&pair.task, &pair.negative).map_err(wrap)?;
        let margin = (policy.response_log_prob(&p) - reference.response_log_prob(&p))
            - (policy.response_log_prob(&l) - reference.response_log_prob(&l));
        total += -libm::log(sigmoid(beta * margin));
    }
    Ok(total / batch.len() as f64)
}
