//! Multi-model tree search over reasoning steps.
//!
//! One iteration expands the current node with every expander, scores each
//! candidate with every evaluator model, drops candidates with a negative
//! mean score, attaches the rest (`N = 1`, `V = R`), propagates their value
//! mass to all ancestors and moves to the child with the best UCB score.
//! When a node yields no surviving candidate it becomes a dead end and the
//! search jumps to the open leaf with the best UCB score anywhere in the tree.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::judge::{Judge, JudgeError, JudgeRequest, Rubric};
use crate::longcot::{self, LongCoTResponse, SectionKind};
use crate::task::TaskInstance;

mod expander;
mod tree;

pub use expander::{ancestor_key, Expander, ScriptRecord, ScriptedExpander, SeededExpander, TemplateBank};
pub use tree::{SearchNode, SearchTree, ROOT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// UCB exploration weight.
    pub exploration: f64,
    pub max_depth: usize,
    pub expansions_per_model: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Keep searching with the remaining expanders when one fails.
    pub skip_failed_expanders: bool,
    /// Evaluator model ids passed to the node judge.
    pub models: Vec<String>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            exploration: 1.0,
            max_depth: 8,
            expansions_per_model: 2,
            max_iterations: 50,
            seed: 0,
            skip_failed_expanders: false,
            models: alloc::vec![String::from("evaluator-a"), String::from("evaluator-b")],
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if !(self.exploration > 0.0 && self.exploration.is_finite()) {
            return Err(SearchError::InvalidConfig(alloc::format!(
                "exploration must be positive, got {}",
                self.exploration
            )));
        }
        if self.max_depth == 0 || self.expansions_per_model == 0 {
            return Err(SearchError::InvalidConfig(
                "max_depth and expansions_per_model must be positive".to_string(),
            ));
        }
        if self.models.is_empty() {
            return Err(SearchError::InvalidConfig(
                "at least one evaluator model is required".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("expander `{expander}` failed: {detail}")]
    ExpanderFailure { expander: String, detail: String },
    #[error("no candidates for node {node}")]
    NoCandidates { node: usize },
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("no complete reasoning path was found")]
    NoCompletePath,
}

/// A proposed step before it is scored.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub state_text: String,
    /// First proposing expander in id order.
    pub expander_id: String,
    pub expanders: Vec<String>,
    pub value: f64,
    pub visits: u64,
    pub terminal: bool,
}

/// Union of all expanders' proposals for `node`, deduplicated by text and
/// sorted by `(state_text, expander_id)`.
pub fn expand(
    tree: &SearchTree,
    node: usize,
    task: &TaskInstance,
    expanders: &[&dyn Expander],
    cfg: &SearchConfig,
) -> Result<Vec<Candidate>, SearchError> {
    let n = tree.node(node);
    if n.terminal {
        return Err(SearchError::Precondition(alloc::format!("node {node} is terminal")));
    }
    if n.depth >= cfg.max_depth {
        return Err(SearchError::Precondition(alloc::format!(
            "node {node} is at the depth limit"
        )));
    }
    if expanders.is_empty() {
        return Err(SearchError::Precondition("no expanders configured".to_string()));
    }
    let ancestors = tree.ancestor_texts(node);
    let mut merged: alloc::collections::BTreeMap<String, Vec<String>> = alloc::collections::BTreeMap::new();
    let mut failure = None;
    for e in expanders {
        let proposals = match e.propose(task, &ancestors, cfg.expansions_per_model) {
            Ok(p) => p,
            Err(detail) => {
                let err = SearchError::ExpanderFailure {
                    expander: e.id().to_string(),
                    detail,
                };
                if cfg.skip_failed_expanders {
                    failure.get_or_insert(err);
                    continue;
                }
                return Err(err);
            }
        };
        for text in proposals {
            if let Err(err) = longcot::parse_section(&text) {
                let err = SearchError::ExpanderFailure {
                    expander: e.id().to_string(),
                    detail: alloc::format!("candidate is not a single section: {err}"),
                };
                if cfg.skip_failed_expanders {
                    failure.get_or_insert(err);
                    continue;
                }
                return Err(err);
            }
            merged.entry(text).or_default().push(e.id().to_string());
        }
    }
    if merged.is_empty() {
        return Err(failure.unwrap_or(SearchError::NoCandidates { node }));
    }
    let mut out: Vec<Candidate> = merged
        .into_iter()
        .map(|(state_text, mut ids)| {
            ids.sort();
            ids.dedup();
            let terminal = is_terminal(&state_text);
            Candidate {
                expander_id: ids[0].clone(),
                expanders: ids,
                state_text,
                value: 0.0,
                visits: 0,
                terminal,
            }
        })
        .collect();
    out.sort_by(|a, b| (&a.state_text, &a.expander_id).cmp(&(&b.state_text, &b.expander_id)));
    Ok(out)
}

/// A state is terminal when it is an `### In Conclusion` section.
pub fn is_terminal(state_text: &str) -> bool {
    matches!(longcot::parse_section(state_text), Ok(s) if s.kind == SectionKind::Conclusion)
}

/// Mean over models of the summed three-way indicators.
pub fn simulate(
    state_text: &str,
    task: &TaskInstance,
    judge: &(impl Judge + ?Sized),
    models: &[String],
) -> Result<f64, SearchError> {
    if models.is_empty() {
        return Err(SearchError::Precondition(
            "at least one evaluator model is required".to_string(),
        ));
    }
    let req = JudgeRequest::for_task(task, Rubric::Node, state_text);
    let verdicts = judge.judge_node(&req, models)?;
    if verdicts.len() != models.len() {
        return Err(SearchError::Judge(JudgeError::Malformed {
            detail: alloc::format!("expected {} verdicts, got {}", models.len(), verdicts.len()),
            payload: String::new(),
        }));
    }
    let mut total = 0i32;
    for v in &verdicts {
        v.validate()?;
        total += v.sum();
    }
    Ok(f64::from(total) / models.len() as f64)
}

/// Keeps candidates with a non-negative reward, in order.
pub fn prune<T>(scored: Vec<(T, f64)>) -> Vec<(T, f64)> {
    scored.into_iter().filter(|(_, r)| *r >= 0.0).collect()
}

/// Folds `(N_c, R_c)` contributions into `start` and every ancestor:
/// `V <- (N V + sum N_c R_c) / (N + sum N_c)`, `N <- N + sum N_c`.
pub fn backprop(tree: &mut SearchTree, start: usize, contributions: &[(u64, f64)]) {
    let added_visits: u64 = contributions.iter().map(|(n, _)| n).sum();
    if added_visits == 0 {
        return;
    }
    let added_mass: f64 = contributions.iter().map(|&(n, r)| n as f64 * r).sum();
    let mut cur = Some(start);
    while let Some(id) = cur {
        let node = tree.node_mut(id);
        let n = node.visits as f64;
        node.value = (n * node.value + added_mass) / (n + added_visits as f64);
        node.visits += added_visits;
        cur = node.parent;
    }
}

/// `V + exploration * sqrt(ln N_parent / (1 + N))`.
pub fn ucb(value: f64, visits: u64, parent_visits: u64, exploration: f64) -> f64 {
    value + exploration * libm::sqrt(libm::log(parent_visits as f64) / (1.0 + visits as f64))
}

/// Best UCB candidate; the first one wins ties.
pub fn select(
    tree: &SearchTree,
    parent: usize,
    candidates: &[usize],
    cfg: &SearchConfig,
) -> Result<usize, SearchError> {
    let parent_visits = tree.node(parent).visits;
    if parent_visits == 0 {
        return Err(SearchError::Precondition(alloc::format!("node {parent} has no visits")));
    }
    let mut best: Option<(usize, f64)> = None;
    for &c in candidates {
        let n = tree.node(c);
        let score = ucb(n.value, n.visits, parent_visits, cfg.exploration);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((c, score));
        }
    }
    best.map(|(c, _)| c).ok_or(SearchError::EmptyCandidateSet)
}

fn is_open(tree: &SearchTree, id: usize, cfg: &SearchConfig) -> bool {
    let n = tree.node(id);
    n.children.is_empty() && !n.terminal && !n.dead_end && n.depth < cfg.max_depth
}

/// Open leaf with the best UCB score over the whole tree.
fn backtrack(tree: &SearchTree, cfg: &SearchConfig) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for node in tree.nodes() {
        if !is_open(tree, node.id, cfg) {
            continue;
        }
        let score = match node.parent {
            Some(p) => ucb(node.value, node.visits, tree.node(p).visits, cfg.exploration),
            None => f64::INFINITY,
        };
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((node.id, score));
        }
    }
    best.map(|(id, _)| id)
}

/// A complete root-to-conclusion trace.
#[derive(Debug, Clone, PartialEq)]
pub struct HarvestedPath {
    pub node_ids: Vec<usize>,
    pub mean_reward: f64,
    pub response: LongCoTResponse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub tree: SearchTree,
    /// Best first.
    pub paths: Vec<HarvestedPath>,
}

impl SearchOutcome {
    pub fn best_paths(&self) -> Vec<&LongCoTResponse> {
        self.paths.iter().map(|p| &p.response).collect()
    }
}

/// Runs the search loop and harvests complete paths.
pub fn search(
    task: &TaskInstance,
    expanders: &[&dyn Expander],
    judge: &(impl Judge + ?Sized),
    cfg: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    cfg.validate()?;
    if expanders.is_empty() {
        return Err(SearchError::Precondition("no expanders configured".to_string()));
    }
    let mut tree = SearchTree::new();
    let mut current = Some(ROOT);
    for _ in 0..cfg.max_iterations {
        let Some(node) = current
            .filter(|&c| is_open(&tree, c, cfg))
            .or_else(|| backtrack(&tree, cfg))
        else {
            break;
        };
        let candidates = match expand(&tree, node, task, expanders, cfg) {
            Ok(c) => c,
            Err(SearchError::NoCandidates { .. }) => Vec::new(),
            Err(e) => return Err(e),
        };
        let mut scored = Vec::with_capacity(candidates.len());
        for c in candidates {
            let r = simulate(&c.state_text, task, judge, &cfg.models)?;
            scored.push((c, r));
        }
        let kept = prune(scored);
        if kept.is_empty() {
            tree.node_mut(node).dead_end = true;
            current = None;
            continue;
        }
        let mut ids = Vec::with_capacity(kept.len());
        let mut contributions = Vec::with_capacity(kept.len());
        for (c, r) in kept {
            ids.push(tree.attach(node, c.state_text, c.expanders, r, c.terminal));
            contributions.push((1, r));
        }
        backprop(&mut tree, node, &contributions);
        let open: Vec<usize> = ids.into_iter().filter(|&id| is_open(&tree, id, cfg)).collect();
        current = if open.is_empty() {
            None
        } else {
            Some(select(&tree, node, &open, cfg)?)
        };
    }
    let paths = harvest(&tree)?;
    Ok(SearchOutcome { tree, paths })
}

/// Assembles every root-to-terminal path that parses as a full trace,
/// ranked by mean node reward (ties by terminal node id).
pub fn harvest(tree: &SearchTree) -> Result<Vec<HarvestedPath>, SearchError> {
    let mut out = Vec::new();
    for node in tree.nodes().iter().filter(|n| n.terminal) {
        let node_ids: Vec<usize> = tree.path(node.id).into_iter().skip(1).collect();
        let mut sections = Vec::with_capacity(node_ids.len());
        let mut ok = true;
        for &id in &node_ids {
            match longcot::parse_section(&tree.node(id).state_text) {
                Ok(s) => sections.push(s),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let Ok(response) = longcot::parse_longcot(&longcot::render_sections(&sections)) else {
            continue;
        };
        let rewards: Vec<f64> = node_ids.iter().filter_map(|&id| tree.node(id).reward).collect();
        let mean_reward = if rewards.is_empty() {
            0.0
        } else {
            rewards.iter().sum::<f64>() / rewards.len() as f64
        };
        out.push(HarvestedPath {
            node_ids,
            mean_reward,
            response,
        });
    }
    if out.is_empty() {
        return Err(SearchError::NoCompletePath);
    }
    out.sort_by(|a, b| {
        b.mean_reward
            .total_cmp(&a.mean_reward)
            .then_with(|| a.node_ids.last().cmp(&b.node_ids.last()))
    });
    Ok(out)
}
