//! Preference-pair construction.
//!
//! Four candidate sources contribute two variants each. After scoring, the
//! best and worst totals form a pair. Hard negatives come from nudging the
//! final numeric value of a good answer's conclusion.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::eval::within_tolerance;
use crate::fdpo::{FdpoError, PairOrigin, PreferencePair};
use crate::judge::Judge;
use crate::longcot::{self, extract_conclusion_values, extract_lengths, LongCoTResponse, CONCLUSION_HEADING};
use crate::rewards::{score_response, RewardError, ScoreError, SegmentScores};
use crate::task::TaskInstance;

pub const POOL_SOURCES: usize = 4;
pub const VARIANTS_PER_SOURCE: u8 = 2;
pub const DEGENERATE_FLAG: &str = "degenerate";
pub const PERTURBED_FLAG: &str = "perturbed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    M3cts,
    ExternalA,
    ExternalB,
    SftModel,
}

impl CandidateSource {
    pub const ALL: [CandidateSource; 4] = [
        CandidateSource::M3cts,
        CandidateSource::ExternalA,
        CandidateSource::ExternalB,
        CandidateSource::SftModel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CandidateSource::M3cts => "m3cts",
            CandidateSource::ExternalA => "external_a",
            CandidateSource::ExternalB => "external_b",
            CandidateSource::SftModel => "sft_model",
        }
    }
}

impl core::fmt::Display for CandidateSource {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub task_id: String,
    pub source: CandidateSource,
    pub variant: u8,
    pub response: LongCoTResponse,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<SegmentScores>,
}

/// Produces the raw text of one candidate answer.
pub trait CandidateGenerator {
    fn source(&self) -> CandidateSource;
    fn generate(&self, task: &TaskInstance, variant: u8) -> Result<String, String>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PairgenError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("generator `{generator}` failed: {detail}")]
    GeneratorFailure { generator: CandidateSource, detail: String },
    #[error("candidate from `{generator}` variant {variant} does not parse: {detail}")]
    MalformedCandidate {
        generator: CandidateSource,
        variant: u8,
        detail: String,
    },
    #[error("candidate from `{generator}` variant {variant} has no scores")]
    UnscoredCandidate { generator: CandidateSource, variant: u8 },
    #[error("conclusion has no numeric length to perturb")]
    NoConclusionValue,
    #[error("no perturbation in the configured band changes the value{0}")]
    PerturbationInfeasible(&'static str),
    #[error("scoring failed: {0}")]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Pair(#[from] FdpoError),
}

/// Two variants from each of the four sources, in `(source, variant)` order.
pub fn build_pool(
    task: &TaskInstance,
    generators: &[&dyn CandidateGenerator],
) -> Result<Vec<CandidateRecord>, PairgenError> {
    if generators.len() != POOL_SOURCES {
        return Err(PairgenError::Precondition(format!(
            "a pool needs exactly {POOL_SOURCES} generators, got {}",
            generators.len()
        )));
    }
    let mut sources: Vec<CandidateSource> = generators.iter().map(|g| g.source()).collect();
    sources.sort();
    sources.dedup();
    if sources.len() != POOL_SOURCES {
        return Err(PairgenError::Precondition(
            "generator sources must be distinct".to_string(),
        ));
    }
    let mut pool = Vec::with_capacity(POOL_SOURCES * usize::from(VARIANTS_PER_SOURCE));
    for g in generators {
        for variant in 1..=VARIANTS_PER_SOURCE {
            let text = g
                .generate(task, variant)
                .map_err(|detail| PairgenError::GeneratorFailure {
                    generator: g.source(),
                    detail,
                })?;
            let response = longcot::parse_longcot(&text).map_err(|e| PairgenError::MalformedCandidate {
                generator: g.source(),
                variant,
                detail: e.to_string(),
            })?;
            pool.push(CandidateRecord {
                task_id: task.task_id.clone(),
                source: g.source(),
                variant,
                response,
                scores: None,
            });
        }
    }
    pool.sort_by_key(|c| (c.source, c.variant));
    Ok(pool)
}

/// Fills in the scores of every candidate.
pub fn score_pool(
    task: &TaskInstance,
    pool: &mut [CandidateRecord],
    judge: &(impl Judge + ?Sized),
) -> Result<(), PairgenError> {
    for c in pool.iter_mut() {
        c.scores = Some(score_response(task, &c.response, judge)?.scores);
    }
    Ok(())
}

/// Best total as positive, worst total as negative. Ties go to the earlier
/// candidate in `(source, variant)` order. A pool whose totals are all equal
/// yields its first two candidates and the `degenerate` flag.
pub fn select_pair(
    task: &TaskInstance,
    pool: &[CandidateRecord],
    pair_id: &str,
) -> Result<PreferencePair, PairgenError> {
    if pool.len() < 2 {
        return Err(PairgenError::Precondition(
            "a pool needs at least two candidates".to_string(),
        ));
    }
    let mut ordered: Vec<(&CandidateRecord, SegmentScores)> = Vec::with_capacity(pool.len());
    for c in pool {
        let scores = c.scores.ok_or(PairgenError::UnscoredCandidate {
            generator: c.source,
            variant: c.variant,
        })?;
        ordered.push((c, scores));
    }
    ordered.sort_by_key(|(c, _)| (c.source, c.variant));
    let (mut best, mut worst) = (0, 0);
    for (i, (_, s)) in ordered.iter().enumerate() {
        if s.total() > ordered[best].1.total() {
            best = i;
        }
        if s.total() < ordered[worst].1.total() {
            worst = i;
        }
    }
    let degenerate = best == worst;
    if degenerate {
        worst = 1;
    }
    let (p, sp) = ordered[best];
    let (l, sl) = ordered[worst];
    let mut pair = PreferencePair::new(
        pair_id,
        task.clone(),
        p.response.clone(),
        l.response.clone(),
        sp,
        sl,
        PairOrigin::Selected,
    );
    if degenerate {
        pair.flags.push(DEGENERATE_FLAG.to_string());
    }
    Ok(pair)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    /// Smallest relative change.
    pub min_fraction: f64,
    /// Largest relative change.
    pub max_fraction: f64,
    /// Subtracted from the positive's `r_lc` (floored at 0) to score the
    /// perturbed negative.
    pub validity_penalty: f64,
    pub max_attempts: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            min_fraction: 0.1,
            max_fraction: 0.3,
            validity_penalty: 1.0,
            max_attempts: 256,
        }
    }
}

fn round_to(x: f64, decimals: usize) -> f64 {
    let scale = libm::pow(10.0, decimals as f64);
    libm::round(x * scale) / scale
}

/// Replaces the last length in the conclusion with a value moved by a random
/// factor in `1 ± [min_fraction, max_fraction]`, rounded to the literal's
/// precision. With `truth_m`, the new value must also flip the ±25% verdict.
/// All other bytes of the document are left untouched.
pub fn perturb_conclusion(
    positive: &LongCoTResponse,
    rng: &mut impl Rng,
    cfg: &PerturbConfig,
    truth_m: Option<f64>,
) -> Result<LongCoTResponse, PairgenError> {
    if !(0.0 < cfg.min_fraction && cfg.min_fraction <= cfg.max_fraction && cfg.max_fraction < 1.0) {
        return Err(PairgenError::Precondition(format!(
            "perturbation band must satisfy 0 < min <= max < 1, got [{}, {}]",
            cfg.min_fraction, cfg.max_fraction
        )));
    }
    let target = extract_conclusion_values(positive)
        .pop()
        .ok_or(PairgenError::NoConclusionValue)?;
    let mut replacement = None;
    for _ in 0..cfg.max_attempts {
        let magnitude = rng.gen_range(cfg.min_fraction..=cfg.max_fraction);
        let factor = if rng.gen::<bool>() {
            1.0 + magnitude
        } else {
            1.0 - magnitude
        };
        let candidate = round_to(target.raw_value * factor, target.decimals);
        if candidate == target.raw_value || candidate <= 0.0 || candidate.is_nan() {
            continue;
        }
        if let Some(truth) = truth_m {
            if within_tolerance(target.source_unit.to_meters(candidate), truth)
                == within_tolerance(target.numeric_value, truth)
            {
                continue;
            }
        }
        replacement = Some(candidate);
        break;
    }
    let Some(value) = replacement else {
        return Err(PairgenError::PerturbationInfeasible(if truth_m.is_some() {
            " and flips the verdict"
        } else {
            ""
        }));
    };
    let literal = format!("{:.*}", target.decimals, value);
    let (start, end) = target.span;
    let mut conclusion = String::with_capacity(positive.conclusion.len() + 4);
    conclusion.push_str(&positive.conclusion[..start]);
    conclusion.push_str(&literal);
    conclusion.push_str(&positive.conclusion[end..]);

    let raw_text = splice_conclusion(&positive.raw_text, &positive.conclusion, start, end, &literal)
        .ok_or_else(|| PairgenError::Precondition("conclusion not found in the raw text".to_string()))?;
    let mut negative = positive.clone();
    negative.conclusion = conclusion;
    negative.refresh();
    negative.raw_text = raw_text;
    Ok(negative)
}

fn splice_conclusion(raw: &str, conclusion: &str, start: usize, end: usize, literal: &str) -> Option<String> {
    let heading = raw.rfind(CONCLUSION_HEADING)?;
    let body = heading + raw[heading..].find(conclusion)?;
    let mut out = String::with_capacity(raw.len() + literal.len());
    out.push_str(&raw[..body + start]);
    out.push_str(literal);
    out.push_str(&raw[body + end..]);
    Some(out)
}

/// Ground truth of a task in meters, when it holds a length.
pub fn truth_meters(task: &TaskInstance) -> Option<f64> {
    task.ground_truth
        .as_deref()
        .and_then(|t| extract_lengths(t).pop())
        .map(|v| v.numeric_value)
}

/// Pairs a good response with its perturbed copy. The negative reuses the
/// positive's scores with the validity penalty taken off `r_lc`.
pub fn perturbed_pair(
    pair_id: &str,
    task: &TaskInstance,
    positive: &LongCoTResponse,
    scores_p: SegmentScores,
    rng: &mut impl Rng,
    cfg: &PerturbConfig,
) -> Result<PreferencePair, PairgenError> {
    let negative = perturb_conclusion(positive, rng, cfg, truth_meters(task))?;
    let r_lc = (scores_p.r_lc - cfg.validity_penalty).max(0.0);
    let scores_l = SegmentScores::from_rewards(scores_p.r_vc, scores_p.r_sp_desc, scores_p.r_sp_reason, r_lc)?;
    let mut pair = PreferencePair::new(
        pair_id,
        task.clone(),
        positive.clone(),
        negative,
        scores_p,
        scores_l,
        PairOrigin::Perturbed,
    );
    pair.flags.push(PERTURBED_FLAG.to_string());
    Ok(pair)
}

/// Flat JSONL form of a [`PreferencePair`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub pair_id: String,
    pub task_id: String,
    pub question: String,
    #[serde(default)]
    pub image_ref: String,
    #[serde(default)]
    pub depth_ref: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub region_prompts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    pub positive_text: String,
    pub negative_text: String,
    pub scores_p: SegmentScores,
    pub scores_l: SegmentScores,
    pub delta_desc: f64,
    pub delta_reason: f64,
    pub origin: PairOrigin,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl From<&PreferencePair> for PairRecord {
    fn from(p: &PreferencePair) -> Self {
        PairRecord {
            pair_id: p.pair_id.clone(),
            task_id: p.task.task_id.clone(),
            question: p.task.question.clone(),
            image_ref: p.task.image_ref.clone(),
            depth_ref: p.task.depth_ref.clone(),
            region_prompts: p.task.region_prompts.clone(),
            ground_truth: p.task.ground_truth.clone(),
            positive_text: p.positive.raw_text.clone(),
            negative_text: p.negative.raw_text.clone(),
            scores_p: p.scores_p,
            scores_l: p.scores_l,
            delta_desc: p.delta_desc,
            delta_reason: p.delta_reason,
            origin: p.origin,
            flags: p.flags.clone(),
        }
    }
}

impl PairRecord {
    /// Parses both texts and checks scores and differentials.
    pub fn into_pair(self) -> Result<PreferencePair, String> {
        let positive = longcot::parse_longcot(&self.positive_text).map_err(|e| format!("positive_text: {e}"))?;
        let negative = longcot::parse_longcot(&self.negative_text).map_err(|e| format!("negative_text: {e}"))?;
        self.scores_p.validate().map_err(|e| format!("scores_p: {e}"))?;
        self.scores_l.validate().map_err(|e| format!("scores_l: {e}"))?;
        let pair = PreferencePair {
            pair_id: self.pair_id,
            task: TaskInstance {
                task_id: self.task_id,
                image_ref: self.image_ref,
                depth_ref: self.depth_ref,
                question: self.question,
                region_prompts: self.region_prompts,
                ground_truth: self.ground_truth,
            },
            positive,
            negative,
            scores_p: self.scores_p,
            scores_l: self.scores_l,
            delta_desc: self.delta_desc,
            delta_reason: self.delta_reason,
            origin: self.origin,
            flags: self.flags,
        };
        pair.validate().map_err(|e| e.to_string())?;
        Ok(pair)
    }
}

/// Fixed candidate texts, for fixtures and tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedGenerator {
    pub source: CandidateSource,
    /// Texts for variants 1 and 2.
    pub texts: [String; 2],
}

impl CandidateGenerator for ScriptedGenerator {
    fn source(&self) -> CandidateSource {
        self.source
    }

    fn generate(&self, _task: &TaskInstance, variant: u8) -> Result<String, String> {
        self.texts
            .get(usize::from(variant).wrapping_sub(1))
            .cloned()
            .ok_or_else(|| format!("no text for variant {variant}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doc(conclusion: &str) -> LongCoTResponse {
        LongCoTResponse::new("Two regions.", "", vec!["Measure the gap.".to_string()], conclusion)
    }

    fn scored(source: CandidateSource, variant: u8, desc: f64, reason: f64) -> CandidateRecord {
        CandidateRecord {
            task_id: "t".into(),
            source,
            variant,
            response: doc(&format!("{source} {variant}")),
            scores: Some(SegmentScores::from_rewards(desc / 2.0, desc / 2.0, reason / 2.0, reason / 2.0).unwrap()),
        }
    }

    fn pool(totals: &[f64]) -> Vec<CandidateRecord> {
        totals
            .iter()
            .enumerate()
            .map(|(i, t)| scored(CandidateSource::ALL[i / 2], (i % 2) as u8 + 1, t / 2.0, t / 2.0))
            .collect()
    }

    #[test]
    fn selection() {
        let task = TaskInstance::new("t", "q");
        let p = pool(&[12.1, 9.3, 14.8, 7.2, 11.0, 10.5, 13.3, 8.8]);
        let pair = select_pair(&task, &p, "x").unwrap();
        assert_eq!(pair.positive, p[2].response);
        assert_eq!(pair.negative, p[3].response);

        let p = pool(&[5.0; 8]);
        let pair = select_pair(&task, &p, "x").unwrap();
        assert_eq!(
            (pair.positive.clone(), pair.negative.clone()),
            (p[0].response.clone(), p[1].response.clone())
        );
        assert_eq!(pair.flags, vec![DEGENERATE_FLAG.to_string()]);

        let mut p = pool(&[5.0; 8]);
        p[3].scores = None;
        assert!(matches!(
            select_pair(&task, &p, "x"),
            Err(PairgenError::UnscoredCandidate { variant: 2, .. })
        ));
    }

    #[test]
    fn mixed_sign_differentials() {
        let task = TaskInstance::new("t", "q");
        let mut p = pool(&[6.0; 8]);
        p[0] = scored(CandidateSource::M3cts, 1, 2.0, 8.0);
        p[1] = scored(CandidateSource::M3cts, 2, 4.0, 1.0);
        let pair = select_pair(&task, &p, "x").unwrap();
        assert!(pair.delta_desc < 0.0 && pair.delta_reason > 0.0);
    }

    #[test]
    fn pool_building() {
        let task = TaskInstance::new("t", "q");
        let gens: Vec<ScriptedGenerator> = CandidateSource::ALL
            .iter()
            .map(|&s| ScriptedGenerator {
                source: s,
                texts: [doc("a 1 m").raw_text, doc("b 2 m").raw_text],
            })
            .collect();
        let refs: Vec<&dyn CandidateGenerator> = gens.iter().map(|g| g as &dyn CandidateGenerator).collect();
        let pool = build_pool(&task, &refs).unwrap();
        assert_eq!(pool.len(), 8);
        assert!(matches!(
            build_pool(&task, &refs[..3]),
            Err(PairgenError::Precondition(_))
        ));
        let mut bad = gens.clone();
        bad[1].texts[0] = "no headings".into();
        let refs: Vec<&dyn CandidateGenerator> = bad.iter().map(|g| g as &dyn CandidateGenerator).collect();
        assert!(matches!(
            build_pool(&task, &refs),
            Err(PairgenError::MalformedCandidate {
                generator: CandidateSource::ExternalA,
                ..
            })
        ));
    }

    #[test]
    fn perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pos = doc("The distance between region1 and region2 is 11 meters.");
        let neg = perturb_conclusion(&pos, &mut rng, &PerturbConfig::default(), None).unwrap();
        assert_eq!(neg.description, pos.description);
        assert_eq!(neg.steps, pos.steps);
        assert_ne!(neg.conclusion, pos.conclusion);
        assert!(neg
            .conclusion
            .starts_with("The distance between region1 and region2 is "));
        assert!(neg.conclusion.ends_with(" meters."));
        assert_eq!(longcot::parse_longcot(&neg.raw_text).unwrap(), neg);
        let v = extract_conclusion_values(&neg)[0].numeric_value;
        assert!((7.0..=15.0).contains(&v) && v != 11.0);

        let flipped = perturb_conclusion(&pos, &mut rng, &PerturbConfig::default(), Some(11.0)).unwrap();
        let v = extract_conclusion_values(&flipped)[0].numeric_value;
        assert!(!within_tolerance(v, 11.0));

        assert_eq!(
            perturb_conclusion(&doc("no numbers"), &mut rng, &PerturbConfig::default(), None),
            Err(PairgenError::NoConclusionValue)
        );
        assert!(matches!(
            perturb_conclusion(&doc("1 m"), &mut rng, &PerturbConfig::default(), None),
            Err(PairgenError::PerturbationInfeasible(_))
        ));
    }

    #[test]
    fn perturbed_pair_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let task = TaskInstance::new("t", "q").with_ground_truth("95 cm");
        let pos = doc("75cm + 20cm = 95cm");
        let sp = SegmentScores::from_rewards(3.0, 2.0, 1.0, 0.5).unwrap();
        let pair = perturbed_pair("p", &task, &pos, sp, &mut rng, &PerturbConfig::default()).unwrap();
        assert_eq!(pair.delta_desc, 0.0);
        assert_eq!(pair.delta_reason, 0.5);
        assert!(pair.negative.conclusion.starts_with("75cm + 20cm = "));
        let record = PairRecord::from(&pair);
        assert_eq!(record.into_pair().unwrap(), pair);
    }
}
