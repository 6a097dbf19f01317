//! Reading typed scores out of free-form judge output.
//!
//! A judge answer may wrap its JSON in prose. The first JSON object (at any
//! nesting depth) that carries the rubric's score key is used. Component
//! breakdowns are optional; without one, the total is split evenly.

use serde_json::{Map, Value};

use segpref_core::judge::{JudgeError, NodeIndicators, Rubric};
use segpref_core::longcot::Segment;
use segpref_core::rewards::{LcSubscores, SpatialClaim, VcSubscores, MAX_REWARD};

/// Breakdowns must add up to the stated total within this slack.
const SUM_TOLERANCE: f64 = 1e-6;

fn malformed(detail: impl Into<String>, text: &str) -> JudgeError {
    JudgeError::Malformed {
        detail: detail.into(),
        payload: text.to_string(),
    }
}

fn search(value: &Value, key: &str) -> Option<Map<String, Value>> {
    match value {
        Value::Object(m) if m.contains_key(key) => Some(m.clone()),
        Value::Object(m) => m.values().find_map(|v| search(v, key)),
        Value::Array(items) => items.iter().find_map(|v| search(v, key)),
        _ => None,
    }
}

/// First JSON object in `text` that has `key`.
pub fn keyed_object(text: &str, key: &str) -> Option<Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(value)) = stream.next() {
            if let Some(m) = search(&value, key) {
                return Some(m);
            }
        }
    }
    None
}

fn object(text: &str, rubric: Rubric) -> Result<Map<String, Value>, JudgeError> {
    keyed_object(text, rubric.score_key())
        .ok_or_else(|| malformed(format!("no JSON object with `{}`", rubric.score_key()), text))
}

fn number(v: &Value, what: &str, text: &str) -> Result<f64, JudgeError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| malformed(format!("`{what}` is not a finite number: {v}"), text))
}

fn unit(x: f64, what: &str, text: &str) -> Result<f64, JudgeError> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(malformed(format!("`{what}` = {x} is outside [0, 1]"), text))
    }
}

/// Total plus four named components, each in `[0, 1]`.
fn four_components(text: &str, rubric: Rubric, names: [&str; 4]) -> Result<[f64; 4], JudgeError> {
    let obj = object(text, rubric)?;
    let key = rubric.score_key();
    let total = number(&obj[key], key, text)?;
    if !(0.0..=MAX_REWARD).contains(&total) {
        return Err(malformed(format!("`{key}` = {total} is outside [0, 4]"), text));
    }
    let present = names.iter().filter(|n| obj.contains_key(**n)).count();
    let parts = match present {
        0 => [total / 4.0; 4],
        4 => {
            let mut parts = [0.0; 4];
            for (slot, name) in parts.iter_mut().zip(names) {
                *slot = number(&obj[name], name, text)?;
            }
            let sum: f64 = parts.iter().sum();
            if (sum - total).abs() > SUM_TOLERANCE {
                return Err(malformed(format!("components sum to {sum}, total says {total}"), text));
            }
            parts
        }
        _ => return Err(malformed("component breakdown is incomplete", text)),
    };
    for (x, name) in parts.iter().zip(names) {
        unit(*x, name, text)?;
    }
    Ok(parts)
}

pub fn parse_description(text: &str) -> Result<VcSubscores, JudgeError> {
    let [a, b, c, d] = four_components(
        text,
        Rubric::Description,
        ["existence", "attribute_accuracy", "completeness", "appropriateness"],
    )?;
    Ok(VcSubscores::new(a, b, c, d))
}

pub fn parse_reasoning(text: &str) -> Result<LcSubscores, JudgeError> {
    let [a, b, c, d] = four_components(
        text,
        Rubric::Reasoning,
        [
            "factual_consistency",
            "logical_coherence",
            "rule_application",
            "conclusion_validity",
        ],
    )?;
    Ok(LcSubscores::new(a, b, c, d))
}

/// `[[r, W_u, W_c], ...]` with optional parallel `claims` texts.
pub fn parse_claims(text: &str, rubric: Rubric) -> Result<Vec<SpatialClaim>, JudgeError> {
    let segment = match rubric {
        Rubric::SpatialDesc => Segment::Desc,
        Rubric::SpatialReason => Segment::Reason,
        other => return Err(JudgeError::Precondition(format!("`{other}` is not a spatial rubric"))),
    };
    let obj = object(text, rubric)?;
    let key = rubric.score_key();
    let triples = obj[key]
        .as_array()
        .ok_or_else(|| malformed(format!("`{key}` is not a list"), text))?;
    let texts: Vec<String> = match obj.get("claims") {
        None => vec![String::new(); triples.len()],
        Some(Value::Array(items)) if items.len() == triples.len() => items
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<_>>()
            .ok_or_else(|| malformed("`claims` must hold strings", text))?,
        Some(_) => return Err(malformed("`claims` must be a list as long as the scores", text)),
    };
    triples
        .iter()
        .zip(texts)
        .enumerate()
        .map(|(i, (t, claim_text))| {
            let parts = t
                .as_array()
                .filter(|p| p.len() == 3)
                .ok_or_else(|| malformed(format!("claim {i} is not a triple"), text))?;
            let claim = SpatialClaim {
                text: claim_text,
                correctness: number(&parts[0], "correctness", text)?,
                uncertainty_weight: number(&parts[1], "uncertainty", text)?,
                context_weight: number(&parts[2], "relationship", text)?,
                segment,
            };
            claim
                .validate()
                .map_err(|e| malformed(format!("claim {i}: {e}"), text))?;
            Ok(claim)
        })
        .collect()
}

/// `{"indicators": [v, s, l]}` or the named-field form.
pub fn parse_node(text: &str, model: &str) -> Result<NodeIndicators, JudgeError> {
    let obj = object(text, Rubric::Node)?;
    let raw = &obj["indicators"];
    let values: Vec<&Value> = match raw {
        Value::Array(items) => items.iter().collect(),
        Value::Object(m) => ["visual", "spatial", "logical"]
            .iter()
            .map(|k| m.get(*k).unwrap_or(&Value::Null))
            .collect(),
        _ => Vec::new(),
    };
    if values.len() != 3 {
        return Err(malformed("`indicators` needs exactly three values", text));
    }
    let mut ints = [0i8; 3];
    for (slot, v) in ints.iter_mut().zip(values) {
        *slot = v
            .as_i64()
            .filter(|x| (-1..=1).contains(x))
            .ok_or_else(|| malformed(format!("indicator {v} is not one of -1, 0, 1"), text))? as i8;
    }
    NodeIndicators::new(model, ints[0], ints[1], ints[2]).map_err(|e| malformed(e.to_string(), text))
}

pub fn render_node(ind: &NodeIndicators) -> String {
    format!("{{\"indicators\": [{}, {}, {}]}}", ind.visual, ind.spatial, ind.logical)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breakdown_is_used_when_present() {
        let text = r#"Scores: {"task1_score": 3.1, "existence": 0.9, "attribute_accuracy": 0.7, "completeness": 0.5, "appropriateness": 1.0}"#;
        assert_eq!(parse_description(text).unwrap(), VcSubscores::new(0.9, 0.7, 0.5, 1.0));
    }

    #[test]
    fn missing_breakdown_splits_evenly() {
        assert_eq!(
            parse_reasoning(r#"{"task4_score": 2.0}"#).unwrap(),
            LcSubscores::new(0.5, 0.5, 0.5, 0.5)
        );
    }

    #[test]
    fn malformed_outputs_are_rejected() {
        for text in [
            r#"{"task1_score": "high"}"#,
            r#"{"task1_score": 4.5}"#,
            r#"{"task1_score": 2.0, "existence": 1.0}"#,
            r#"{"task1_score": 2.0, "existence": 1.0, "attribute_accuracy": 1.0, "completeness": 1.0, "appropriateness": 1.0}"#,
            "no json here",
        ] {
            let err = parse_description(text).unwrap_err();
            assert!(matches!(err, JudgeError::Malformed { .. }), "{text}");
            assert_eq!(err.payload(), Some(text));
        }
    }

    #[test]
    fn nested_and_prose_wrapped_objects() {
        let text = r#"{"output": {"task2_claim_score": [[1, 0.9, 1.0], [0.5, 1, 0.8]]}} trailing"#;
        let claims = parse_claims(text, Rubric::SpatialDesc).unwrap();
        assert_eq!(claims.len(), 2);
        assert_eq!((claims[0].uncertainty_weight, claims[1].context_weight), (0.9, 0.8));
        assert!(claims.iter().all(|c| c.segment == Segment::Desc));
        assert!(parse_claims(r#"{"task3_claim_score": [[1, 0.5, 1]]}"#, Rubric::SpatialReason).is_err());
        assert!(parse_claims(r#"{"task3_claim_score": [[1, 1]]}"#, Rubric::SpatialReason).is_err());
    }

    #[test]
    fn node_forms() {
        let a = parse_node(r#"{"indicators": [1, 0, -1]}"#, "m").unwrap();
        let b = parse_node(r#"{"indicators": {"visual": 1, "spatial": 0, "logical": -1}}"#, "m").unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_node(&render_node(&a), "m").unwrap(), a);
        assert!(parse_node(r#"{"indicators": [2, 0, 0]}"#, "m").is_err());
    }
}
