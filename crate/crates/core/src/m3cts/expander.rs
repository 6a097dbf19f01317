use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::longcot::{CONCLUSION_HEADING, DESCRIPTION_HEADING, STEP_HEADING_PREFIX};
use crate::task::TaskInstance;
use crate::text;

/// A step generator. Each proposal must be exactly one LongCoT section.
pub trait Expander {
    fn id(&self) -> &str;

    /// Up to `count` next-step candidates after `ancestors` (root excluded).
    fn propose(&self, task: &TaskInstance, ancestors: &[&str], count: usize) -> Result<Vec<String>, String>;
}

/// Lookup key for a path: SHA-256 of the ancestor texts joined by `\x1e`.
pub fn ancestor_key(ancestors: &[&str]) -> String {
    text::sha256_hex(ancestors.join("\u{1e}").as_bytes())
}

/// One line of a scripted-expander fixture. The path is given either as
/// the ancestor texts or as their [`ancestor_key`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRecord {
    pub expander: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ancestors: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ancestor_hash: Option<String>,
    pub candidates: Vec<String>,
}

impl ScriptRecord {
    pub fn key(&self) -> Result<String, String> {
        match (&self.ancestors, &self.ancestor_hash) {
            (Some(a), None) => {
                let refs: Vec<&str> = a.iter().map(String::as_str).collect();
                Ok(ancestor_key(&refs))
            }
            (None, Some(h)) => Ok(h.clone()),
            _ => Err(format!(
                "record for `{}` needs exactly one of `ancestors` or `ancestor_hash`",
                self.expander
            )),
        }
    }
}

/// Replays fixed candidate lists keyed by path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedExpander {
    id: String,
    script: BTreeMap<String, Vec<String>>,
}

impl ScriptedExpander {
    pub fn new(id: impl Into<String>) -> Self {
        ScriptedExpander {
            id: id.into(),
            script: BTreeMap::new(),
        }
    }

    pub fn with(mut self, ancestors: &[&str], candidates: &[&str]) -> Self {
        self.script.insert(
            ancestor_key(ancestors),
            candidates.iter().map(|c| String::from(*c)).collect(),
        );
        self
    }

    /// One expander per distinct `expander` field, ordered by id.
    pub fn from_records(records: &[ScriptRecord]) -> Result<Vec<ScriptedExpander>, String> {
        let mut by_id: BTreeMap<String, ScriptedExpander> = BTreeMap::new();
        for r in records {
            let key = r.key()?;
            by_id
                .entry(r.expander.clone())
                .or_insert_with(|| ScriptedExpander::new(r.expander.clone()))
                .script
                .entry(key)
                .or_default()
                .extend(r.candidates.iter().cloned());
        }
        Ok(by_id.into_values().collect())
    }
}

impl Expander for ScriptedExpander {
    fn id(&self) -> &str {
        &self.id
    }

    fn propose(&self, _task: &TaskInstance, ancestors: &[&str], count: usize) -> Result<Vec<String>, String> {
        Ok(self
            .script
            .get(&ancestor_key(ancestors))
            .map(|c| c.iter().take(count).cloned().collect())
            .unwrap_or_default())
    }
}

/// Sentence banks for [`SeededExpander`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateBank {
    pub descriptions: Vec<String>,
    pub steps: Vec<String>,
    pub conclusions: Vec<String>,
}

/// Draws sections from a [`TemplateBank`] with a generator seeded by
/// `(seed, expander id, task id, path)`, so proposals are reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct SeededExpander {
    pub id: String,
    pub seed: u64,
    pub bank: TemplateBank,
    /// Steps after which only conclusions are proposed.
    pub max_steps: usize,
    /// Chance of proposing a conclusion once at least one step exists.
    pub conclude_probability: f64,
}

impl SeededExpander {
    pub fn new(id: impl Into<String>, seed: u64, bank: TemplateBank) -> Self {
        SeededExpander {
            id: id.into(),
            seed,
            bank,
            max_steps: 4,
            conclude_probability: 0.4,
        }
    }
}

impl Expander for SeededExpander {
    fn id(&self) -> &str {
        &self.id
    }

    fn propose(&self, task: &TaskInstance, ancestors: &[&str], count: usize) -> Result<Vec<String>, String> {
        let mut key = format!("{}\u{1f}{}", self.id, task.task_id);
        for a in ancestors {
            key.push('\u{1e}');
            key.push_str(a);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ text::fnv1a(key.as_bytes()));
        let pick = |bank: &[String], rng: &mut ChaCha8Rng| -> Result<String, String> {
            bank.choose(rng)
                .cloned()
                .ok_or_else(|| format!("expander `{}` has an empty sentence bank", self.id))
        };
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let candidate = if ancestors.is_empty() {
                format!("{DESCRIPTION_HEADING}\n{}", pick(&self.bank.descriptions, &mut rng)?)
            } else {
                let steps = ancestors.len() - 1;
                let conclude = steps >= self.max_steps || (steps >= 1 && rng.gen::<f64>() < self.conclude_probability);
                if conclude {
                    format!("{CONCLUSION_HEADING}\n{}", pick(&self.bank.conclusions, &mut rng)?)
                } else {
                    format!(
                        "{STEP_HEADING_PREFIX}{}\n{}",
                        steps + 1,
                        pick(&self.bank.steps, &mut rng)?
                    )
                }
            };
            out.push(candidate);
        }
        Ok(out)
    }
}
