//! Imported per-segment log-probabilities.
//!
//! Lets an external model's scores drive the loss without a gradient path.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use super::{logistic_loss, FdpoConfig, FdpoError, PreferencePair};
use crate::longcot::Segment;

/// One imported record. `pair_id` names the pair; the positive and negative
/// responses are told apart by the `:p` / `:l` suffix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogProbRecord {
    pub pair_id: String,
    pub segment: Segment,
    pub logp_policy: f64,
    pub logp_reference: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogProbTable {
    entries: BTreeMap<(String, Segment), (f64, f64)>,
}

impl LogProbTable {
    pub fn new(records: impl IntoIterator<Item = LogProbRecord>) -> Self {
        LogProbTable {
            entries: records
                .into_iter()
                .map(|r| ((r.pair_id, r.segment), (r.logp_policy, r.logp_reference)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn ratio(&self, key: String, segment: Segment) -> Result<f64, FdpoError> {
        match self.entries.get(&(key, segment)) {
            Some((policy, reference)) => Ok(policy - reference),
            None => Err(FdpoError::MissingLogProb {
                pair_id: String::new(),
                segment,
            }),
        }
    }

    /// Segment margin of `pair_id` from the `:p` and `:l` records.
    pub fn margin(&self, pair_id: &str, segment: Segment) -> Result<f64, FdpoError> {
        let missing = |_| FdpoError::MissingLogProb {
            pair_id: pair_id.into(),
            segment,
        };
        let p = self.ratio(alloc::format!("{pair_id}:p"), segment).map_err(missing)?;
        let l = self.ratio(alloc::format!("{pair_id}:l"), segment).map_err(missing)?;
        Ok(p - l)
    }
}

/// Mean fDPO loss computed from imported log-probabilities.
pub fn table_fdpo_loss(pairs: &[PreferencePair], table: &LogProbTable, cfg: &FdpoConfig) -> Result<f64, FdpoError> {
    if pairs.is_empty() {
        return Err(FdpoError::EmptyBatch);
    }
    let mut total = 0.0;
    for pair in pairs {
        let (bd, br) = pair.betas(cfg)?;
        let u = bd * table.margin(&pair.pair_id, Segment::Desc)? + br * table.margin(&pair.pair_id, Segment::Reason)?;
        total += logistic_loss(u).0;
    }
    Ok(total / pairs.len() as f64)
}
