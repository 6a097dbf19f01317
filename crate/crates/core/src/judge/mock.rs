//! Deterministic rule-table judge.
//!
//! Each task has a [`Scene`]: the objects that are really in the image, a
//! few known-absent objects, attribute facts, a relation table and the ground
//! truth measurement. Scores are pure functions of the request text and the
//! scene.
//!
//! Description sub-scores:
//! - existence: `1 - 0.1` per distinct absent object mentioned;
//! - attribute accuracy: `1 - 0.3` per wrong attribute fact mentioned (object
//!   and attribute in the same sentence);
//! - completeness: fraction of scene objects mentioned;
//! - appropriateness: `1 - 0.25` per generic filler phrase.
//!
//! Spatial claims are sentences holding a relation phrase between two known
//! objects. `r = 1` when the relation table supports the claim. `W_u` comes
//! from the hedge lexicon; `W_c` is 1.0 for the pairs the question asks about.
//!
//! Reasoning sub-scores:
//! - factual consistency: `1 - 0.25` per absent object or wrong claim;
//! - logical coherence: 1.0 with at least one step, 0.75 without;
//! - rule application: `1 - 0.5` per heuristic shortcut phrase;
//! - conclusion validity: `1 - 0.5` if an arithmetic chain is wrong,
//!   `- 0.5` if the final length misses the ground truth by more than 25%.
//!
//! Node verdicts are three-way: visual from object mentions, spatial from
//! the relation table, logical from arithmetic chains, shortcut phrases and,
//! for a conclusion step, the ground truth.
//!
//! All sub-scores are floored at 0.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_node_request, Judge, JudgeError, JudgeRequest, Judged, NodeIndicators, Rubric};
use crate::eval::within_tolerance;
use crate::longcot::{self, extract_lengths, ParseOptions, Segment};
use crate::rewards::{LcSubscores, SpatialClaim, VcSubscores, CONTEXT_WEIGHT_ASKED, CONTEXT_WEIGHT_AUXILIARY};
use crate::text::{self, contains_phrase, phrase_positions, push_json_string};

const EXISTENCE_PENALTY: f64 = 0.1;
const ATTRIBUTE_PENALTY: f64 = 0.3;
const GENERIC_PENALTY: f64 = 0.25;
const FACTUAL_PENALTY: f64 = 0.25;
const HEURISTIC_PENALTY: f64 = 0.5;
const NO_STEPS_COHERENCE: f64 = 0.75;
const CONCLUSION_PENALTY: f64 = 0.5;

/// Hedge words and the uncertainty weight they imply. The most hedged word
/// in a sentence wins.
pub const QUALIFIERS: &[(&str, f64)] = &[
    ("approximately", 0.9),
    ("roughly", 0.9),
    ("possibly", 0.9),
    ("perhaps", 0.85),
    ("maybe", 0.85),
    ("might", 0.8),
    ("could", 0.8),
];

/// Relation phrases and their inverses.
pub const RELATIONS: &[(&str, &str)] = &[
    ("in front of", "behind"),
    ("behind", "in front of"),
    ("above", "below"),
    ("below", "above"),
    ("left of", "right of"),
    ("right of", "left of"),
    ("taller than", "shorter than"),
    ("shorter than", "taller than"),
    ("higher than", "lower than"),
    ("lower than", "higher than"),
    ("larger than", "smaller than"),
    ("smaller than", "larger than"),
    ("wider than", "narrower than"),
    ("narrower than", "wider than"),
    ("closer than", "farther than"),
    ("farther than", "closer than"),
    ("next to", "next to"),
];

/// Shortcut phrases penalised under rule application.
pub const HEURISTIC_PHRASES: &[&str] = &["half-height", "half height", "half the height", "rule of thumb"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeFact {
    pub object: String,
    pub attribute: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationFact {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub task_id: String,
    /// Objects present in the image (lowercase names).
    pub objects: Vec<String>,
    #[serde(default)]
    pub absent_objects: Vec<String>,
    #[serde(default)]
    pub attributes: Vec<AttributeFact>,
    #[serde(default)]
    pub generic_phrases: Vec<String>,
    #[serde(default)]
    pub relations: Vec<RelationFact>,
    /// Object pairs the question asks about. When empty, a pair counts as
    /// asked if both names occur in the question.
    #[serde(default)]
    pub asked: Vec<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_meters: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaRule {
    /// Lowercase substring of the step text that triggers the rule.
    pub contains: String,
    pub visual: i8,
    pub spatial: i8,
    pub logical: i8,
}

/// An evaluator model stand-in. Rules are tried in order; without a match
/// the default node rules apply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    #[serde(default)]
    pub rules: Vec<PersonaRule>,
}

#[derive(Debug, Clone, Default)]
pub struct MockJudge {
    scenes: BTreeMap<String, Scene>,
    personas: Vec<Persona>,
}

impl MockJudge {
    pub fn new(scenes: impl IntoIterator<Item = Scene>) -> Self {
        MockJudge {
            scenes: scenes.into_iter().map(|s| (s.task_id.clone(), s)).collect(),
            personas: Vec::new(),
        }
    }

    pub fn with_personas(mut self, personas: impl IntoIterator<Item = Persona>) -> Self {
        self.personas = personas.into_iter().collect();
        self
    }

    pub fn scene(&self, task_id: &str) -> Result<&Scene, JudgeError> {
        self.scenes.get(task_id).ok_or_else(|| JudgeError::Unavailable {
            detail: format!("mock judge has no scene for task `{task_id}`"),
        })
    }
}

struct SectionTexts {
    description: String,
    reasoning: String,
    has_steps: bool,
}

/// Reads the sections out of a payload; non-conforming text is treated as a
/// bare segment.
fn section_texts(payload: &str) -> SectionTexts {
    match longcot::parse_with(payload, ParseOptions::LENIENT) {
        Ok((resp, _)) => SectionTexts {
            has_steps: !resp.steps.is_empty(),
            description: resp.desc_segment,
            reasoning: resp.reason_segment,
        },
        Err(_) => SectionTexts {
            description: payload.to_string(),
            reasoning: payload.to_string(),
            has_steps: false,
        },
    }
}

fn floor0(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        x
    }
}

fn mentioned<'a>(names: &'a [String], lower: &str) -> Vec<&'a str> {
    names
        .iter()
        .filter(|n| contains_phrase(lower, &n.to_lowercase()))
        .map(String::as_str)
        .collect()
}

impl Scene {
    pub fn describe(&self, description: &str) -> VcSubscores {
        let lower = description.to_lowercase();
        let absent = mentioned(&self.absent_objects, &lower).len();
        let present = mentioned(&self.objects, &lower).len();
        let completeness = if self.objects.is_empty() {
            1.0
        } else {
            present as f64 / self.objects.len() as f64
        };
        let wrong_attributes = text::sentences(&lower)
            .iter()
            .map(|sentence| {
                self.attributes
                    .iter()
                    .filter(|f| {
                        !f.correct
                            && contains_phrase(sentence, &f.object.to_lowercase())
                            && contains_phrase(sentence, &f.attribute.to_lowercase())
                    })
                    .count()
            })
            .sum::<usize>();
        let generic = mentioned(&self.generic_phrases, &lower).len();
        VcSubscores {
            existence: floor0(1.0 - EXISTENCE_PENALTY * absent as f64),
            attribute_accuracy: floor0(1.0 - ATTRIBUTE_PENALTY * wrong_attributes as f64),
            completeness,
            appropriateness: floor0(1.0 - GENERIC_PENALTY * generic as f64),
        }
    }

    fn is_asked(&self, a: &str, b: &str, question: &str) -> bool {
        if self.asked.is_empty() {
            let q = question.to_lowercase();
            return contains_phrase(&q, a) && contains_phrase(&q, b);
        }
        self.asked.iter().any(|[x, y]| {
            let (x, y) = (x.to_lowercase(), y.to_lowercase());
            (x == a && y == b) || (x == b && y == a)
        })
    }

    fn supports(&self, subject: &str, relation: &str, object: &str) -> bool {
        let inverse = inverse_relation(relation);
        self.relations.iter().any(|f| {
            let (s, r, o) = (
                f.subject.to_lowercase(),
                f.relation.to_lowercase(),
                f.object.to_lowercase(),
            );
            (s == subject && r == relation && o == object)
                || (Some(r.as_str()) == inverse && s == object && o == subject)
        })
    }

    /// Spatial claims found in `text`, tagged with `segment`.
    pub fn spatial_claims(&self, text: &str, question: &str, segment: Segment) -> Vec<SpatialClaim> {
        let names: Vec<String> = self
            .objects
            .iter()
            .chain(&self.absent_objects)
            .map(|n| n.to_lowercase())
            .collect();
        let mut claims = Vec::new();
        for sentence in text::sentences(text) {
            let lower = sentence.to_lowercase();
            let Some((rel_start, relation)) = find_relation(&lower) else {
                continue;
            };
            let rel_end = rel_start + relation.len();
            let mut subject: Option<(usize, &str)> = None;
            let mut object: Option<(usize, &str)> = None;
            for name in &names {
                for pos in phrase_positions(&lower, name) {
                    if pos + name.len() <= rel_start && subject.is_none_or(|(p, _)| pos > p) {
                        subject = Some((pos, name));
                    }
                    if pos >= rel_end && object.is_none_or(|(p, _)| pos < p) {
                        object = Some((pos, name));
                    }
                }
            }
            let (Some((_, subject)), Some((_, object))) = (subject, object) else {
                continue;
            };
            let uncertainty_weight = QUALIFIERS
                .iter()
                .filter(|(word, _)| contains_phrase(&lower, word))
                .map(|&(_, w)| w)
                .fold(1.0, f64::min);
            let context_weight = if self.is_asked(subject, object, question) {
                CONTEXT_WEIGHT_ASKED
            } else {
                CONTEXT_WEIGHT_AUXILIARY
            };
            let correctness = if self.supports(subject, relation, object) {
                1.0
            } else {
                0.0
            };
            claims.push(SpatialClaim {
                text: sentence.to_string(),
                correctness,
                uncertainty_weight,
                context_weight,
                segment,
            });
        }
        claims
    }

    fn truth(&self, ground_truth: Option<&str>) -> Option<f64> {
        self.truth_meters
            .or_else(|| ground_truth.and_then(|g| extract_lengths(g).last().map(|v| v.numeric_value)))
    }

    pub fn reason(&self, sections: &SectionTextsView<'_>, question: &str, ground_truth: Option<&str>) -> LcSubscores {
        let lower = sections.reasoning.to_lowercase();
        let absent = mentioned(&self.absent_objects, &lower).len();
        let wrong_claims = self
            .spatial_claims(sections.reasoning, question, Segment::Reason)
            .iter()
            .filter(|c| c.correctness < 1.0)
            .count();
        let heuristics = HEURISTIC_PHRASES.iter().filter(|p| contains_phrase(&lower, p)).count();
        let (_, wrong_equations) = check_equations(sections.reasoning);
        let mut validity = 1.0;
        if wrong_equations > 0 {
            validity -= CONCLUSION_PENALTY;
        }
        if let (Some(truth), Some(answer)) = (self.truth(ground_truth), extract_lengths(sections.conclusion).last()) {
            if !within_tolerance(answer.numeric_value, truth) {
                validity -= CONCLUSION_PENALTY;
            }
        }
        LcSubscores {
            factual_consistency: floor0(1.0 - FACTUAL_PENALTY * (absent + wrong_claims) as f64),
            logical_coherence: if sections.has_steps { 1.0 } else { NO_STEPS_COHERENCE },
            rule_application: floor0(1.0 - HEURISTIC_PENALTY * heuristics as f64),
            conclusion_validity: floor0(validity),
        }
    }

    /// Default per-step verdict. A conclusion step is also checked against
    /// the ground truth when one is known.
    pub fn node_verdict(&self, step: &str, question: &str, ground_truth: Option<&str>) -> (i8, i8, i8) {
        let lower = step.to_lowercase();
        let visual = if !mentioned(&self.absent_objects, &lower).is_empty() {
            -1
        } else if !mentioned(&self.objects, &lower).is_empty() {
            1
        } else {
            0
        };
        let claims = self.spatial_claims(step, question, Segment::Reason);
        let spatial = if claims.iter().any(|c| c.correctness < 1.0) {
            -1
        } else if claims.is_empty() {
            0
        } else {
            1
        };
        let (right, wrong) = check_equations(step);
        let heuristic = HEURISTIC_PHRASES.iter().any(|p| contains_phrase(&lower, p));
        let answer_hit = match (self.truth(ground_truth), longcot::parse_section(step)) {
            (Some(truth), Ok(sec)) if sec.kind == longcot::SectionKind::Conclusion => extract_lengths(&sec.body)
                .last()
                .map(|a| within_tolerance(a.numeric_value, truth)),
            _ => None,
        };
        let logical = if wrong > 0 || heuristic || answer_hit == Some(false) {
            -1
        } else if right > 0 || answer_hit == Some(true) {
            1
        } else {
            0
        };
        (visual, spatial, logical)
    }
}

/// Borrowed view used by [`Scene::reason`].
pub struct SectionTextsView<'a> {
    pub reasoning: &'a str,
    pub conclusion: &'a str,
    pub has_steps: bool,
}

fn inverse_relation(relation: &str) -> Option<&'static str> {
    RELATIONS.iter().find(|(r, _)| *r == relation).map(|&(_, inv)| inv)
}

/// Earliest relation phrase in a lowercase sentence; the longest wins on a
/// tie.
fn find_relation(lower: &str) -> Option<(usize, &'static str)> {
    let mut best: Option<(usize, &'static str)> = None;
    for &(phrase, _) in RELATIONS {
        if let Some(&pos) = phrase_positions(lower, phrase).first() {
            let better = match best {
                None => true,
                Some((p, b)) => pos < p || (pos == p && phrase.len() > b.len()),
            };
            if better {
                best = Some((pos, phrase));
            }
        }
    }
    best
}

/// Counts `(correct, wrong)` length equations of the form
/// `a ± b ± ... = c`, compared in meters with relative tolerance 1e-6.
pub fn check_equations(text: &str) -> (usize, usize) {
    let lengths = extract_lengths(text);
    let (mut right, mut wrong) = (0, 0);
    let mut acc: Option<f64> = None;
    for pair in lengths.windows(2) {
        let (value, next) = (&pair[0], &pair[1]);
        let running = acc.unwrap_or(value.numeric_value);
        acc = match text[value.unit_end..next.span.0].trim() {
            "+" => Some(running + next.numeric_value),
            "-" => Some(running - next.numeric_value),
            "=" => {
                let expected = next.numeric_value;
                let tol = 1e-6 * expected.abs().max(1e-9);
                if (running - expected).abs() <= tol {
                    right += 1;
                } else {
                    wrong += 1;
                }
                None
            }
            _ => None,
        };
    }
    (right, wrong)
}

fn vc_payload(s: &VcSubscores) -> String {
    let total: f64 = s.components().iter().map(|(_, v)| v).sum();
    let mut out = format!("{{\"task1_score\": {total}");
    for (k, v) in s.components() {
        out.push_str(&format!(", \"{k}\": {v}"));
    }
    out.push('}');
    out
}

fn lc_payload(s: &LcSubscores) -> String {
    let total: f64 = s.components().iter().map(|(_, v)| v).sum();
    let mut out = format!("{{\"task4_score\": {total}");
    for (k, v) in s.components() {
        out.push_str(&format!(", \"{k}\": {v}"));
    }
    out.push('}');
    out
}

fn claims_payload(key: &str, claims: &[SpatialClaim]) -> String {
    let mut out = format!("{{\"{key}\": [");
    for (i, c) in claims.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&format!(
            "[{}, {}, {}]",
            c.correctness, c.uncertainty_weight, c.context_weight
        ));
    }
    out.push_str("], \"claims\": [");
    for (i, c) in claims.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        push_json_string(&mut out, &c.text);
    }
    out.push_str("]}");
    out
}

impl Judge for MockJudge {
    fn judge_description(&self, req: &JudgeRequest) -> Result<Judged<VcSubscores>, JudgeError> {
        req.expect_rubric(&[Rubric::Description])?;
        let scene = self.scene(&req.task_id)?;
        let value = scene.describe(&section_texts(&req.payload_text).description);
        Ok(Judged {
            payload: vc_payload(&value),
            value,
        })
    }

    fn judge_spatial_claims(&self, req: &JudgeRequest) -> Result<Judged<Vec<SpatialClaim>>, JudgeError> {
        req.expect_rubric(&[Rubric::SpatialDesc, Rubric::SpatialReason])?;
        let scene = self.scene(&req.task_id)?;
        let sections = section_texts(&req.payload_text);
        let (text, segment) = if req.rubric == Rubric::SpatialDesc {
            (sections.description, Segment::Desc)
        } else {
            (sections.reasoning, Segment::Reason)
        };
        let value = scene.spatial_claims(&text, &req.question, segment);
        Ok(Judged {
            payload: claims_payload(req.rubric.score_key(), &value),
            value,
        })
    }

    fn judge_reasoning(&self, req: &JudgeRequest) -> Result<Judged<LcSubscores>, JudgeError> {
        req.expect_rubric(&[Rubric::Reasoning])?;
        let scene = self.scene(&req.task_id)?;
        let parsed = longcot::parse_with(&req.payload_text, ParseOptions::LENIENT).ok();
        let sections = section_texts(&req.payload_text);
        let conclusion = parsed
            .as_ref()
            .map_or(req.payload_text.as_str(), |(r, _)| r.conclusion.as_str());
        let view = SectionTextsView {
            reasoning: &sections.reasoning,
            conclusion,
            has_steps: sections.has_steps,
        };
        let value = scene.reason(&view, &req.question, req.ground_truth.as_deref());
        Ok(Judged {
            payload: lc_payload(&value),
            value,
        })
    }

    fn judge_node(&self, req: &JudgeRequest, models: &[String]) -> Result<Vec<NodeIndicators>, JudgeError> {
        check_node_request(req, models)?;
        let scene = self.scene(&req.task_id)?;
        let lower = req.payload_text.to_lowercase();
        models
            .iter()
            .map(|model| {
                let rule = self
                    .personas
                    .iter()
                    .find(|p| &p.id == model)
                    .and_then(|p| p.rules.iter().find(|r| lower.contains(&r.contains.to_lowercase())));
                let (v, s, l) = match rule {
                    Some(r) => (r.visual, r.spatial, r.logical),
                    None => scene.node_verdict(&req.payload_text, &req.question, req.ground_truth.as_deref()),
                };
                NodeIndicators::new(model.clone(), v, s, l)
            })
            .collect()
    }
}
