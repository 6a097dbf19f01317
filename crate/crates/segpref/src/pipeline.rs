//! The stages behind each subcommand, free of argument parsing and file IO.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use segpref_core::eval::{evaluate_item, summarize};
use segpref_core::experiment::{initial_policy, split_holdout};
use segpref_core::fdpo::{train, BigramPolicy, FdpoError, PolicyModel, PreferencePair, TrainReport};
use segpref_core::judge::{Judge, JudgeError};
use segpref_core::longcot::{parse_with, render_longcot, ParseOptions};
use segpref_core::m3cts::{search, Expander, SearchConfig, SearchError, SearchNode};
use segpref_core::pairgen::{perturbed_pair, select_pair, CandidateRecord, PairRecord, PairgenError, PerturbConfig};
use segpref_core::rewards::{score_response, ScoreError};
use segpref_core::TaskInstance;

use crate::config::RunConfig;
use crate::records::{EvalReport, ParsedRecord, PolicyFile, PredictionRecord, ResponseRecord, ScoredRecord};
use crate::Failure;

pub type TaskMap = BTreeMap<String, TaskInstance>;

pub fn task_map(tasks: Vec<TaskInstance>) -> Result<TaskMap, Failure> {
    let mut map = BTreeMap::new();
    for t in tasks {
        let id = t.task_id.clone();
        if map.insert(id.clone(), t).is_some() {
            return Err(Failure::Input(format!("task `{id}` is listed twice")));
        }
    }
    Ok(map)
}

fn lookup<'a>(tasks: &'a TaskMap, task_id: &str, item: &str) -> Result<&'a TaskInstance, Failure> {
    tasks
        .get(task_id)
        .ok_or_else(|| Failure::Input(format!("{item}: unknown task `{task_id}`")))
}

/// Unreachable judges and judge output that cannot be read are failures of
/// the judge service; precondition errors point at the input.
fn judge_failure(item: &str, e: &JudgeError) -> Failure {
    let msg = format!("{item}: {e}");
    if e.is_external() || matches!(e, JudgeError::Malformed { .. }) {
        Failure::External(msg)
    } else {
        Failure::Input(msg)
    }
}

pub fn parse_corpus(records: &[ResponseRecord], lenient: bool) -> Result<Vec<ParsedRecord>, Failure> {
    let opts = if lenient {
        ParseOptions::LENIENT
    } else {
        ParseOptions::STRICT
    };
    records
        .iter()
        .map(|r| {
            let (response, warnings) =
                parse_with(&r.text, opts).map_err(|e| Failure::Input(format!("response `{}`: {e}", r.id)))?;
            Ok(ParsedRecord {
                id: r.id.clone(),
                task_id: r.task_id.clone(),
                source: r.source,
                variant: r.variant,
                response,
                warnings: warnings.iter().map(|w| w.to_string()).collect(),
            })
        })
        .collect()
}

fn score_one(p: &ParsedRecord, tasks: &TaskMap, judge: &(dyn Judge + Sync)) -> Result<ScoredRecord, Failure> {
    let item = format!("response `{}` (task `{}`)", p.id, p.task_id);
    p.response
        .validate()
        .map_err(|e| Failure::Input(format!("{item}: {e}")))?;
    let task = lookup(tasks, &p.task_id, &item)?;
    let scored = score_response(task, &p.response, judge).map_err(|e| match &e {
        ScoreError::Judge(j) => judge_failure(&item, j),
        other => Failure::Input(format!(
            "{item}: {other}; judge output: {}",
            other.payload().unwrap_or_default()
        )),
    })?;
    Ok(ScoredRecord {
        id: p.id.clone(),
        task_id: p.task_id.clone(),
        source: p.source,
        variant: p.variant,
        response: p.response.clone(),
        scores: scored.scores,
        payloads: scored.payloads,
        empty_desc_claims: scored.empty_desc_claims,
        empty_reason_claims: scored.empty_reason_claims,
    })
}

/// Scores with up to `jobs` worker threads; output order follows input
/// order.
pub fn score_records(
    parsed: &[ParsedRecord],
    tasks: &TaskMap,
    judge: &(dyn Judge + Sync),
    jobs: usize,
) -> Result<Vec<ScoredRecord>, Failure> {
    let jobs = jobs.clamp(1, parsed.len().max(1));
    if jobs == 1 {
        return parsed.iter().map(|p| score_one(p, tasks, judge)).collect();
    }
    let chunk = parsed.len().div_ceil(jobs);
    let results: Vec<Result<Vec<ScoredRecord>, Failure>> = std::thread::scope(|s| {
        let handles: Vec<_> = parsed
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|p| score_one(p, tasks, judge)).collect()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scoring worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(parsed.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn pairgen_failure(item: &str, e: PairgenError) -> Failure {
    match &e {
        PairgenError::Score(ScoreError::Judge(j)) if !matches!(j, JudgeError::Precondition(_)) => {
            judge_failure(item, j)
        }
        _ => Failure::Input(format!("{item}: {e}")),
    }
}

/// One selected pair per task (in task-id order) and, with `perturb`, one
/// perturbed pair per task whose positive has a usable length. Returns the
/// pairs and any skipped-perturbation notes.
pub fn build_pairs(
    scored: &[ScoredRecord],
    tasks: &TaskMap,
    perturb: Option<(&PerturbConfig, u64)>,
) -> Result<(Vec<PairRecord>, Vec<String>), Failure> {
    let mut pools: BTreeMap<&str, Vec<CandidateRecord>> = BTreeMap::new();
    for s in scored {
        let item = format!("response `{}`", s.id);
        let (Some(source), Some(variant)) = (s.source, s.variant) else {
            return Err(Failure::Input(format!(
                "{item}: `source` and `variant` are required to build pools"
            )));
        };
        s.scores
            .validate()
            .map_err(|e| Failure::Input(format!("{item}: {e}")))?;
        pools.entry(&s.task_id).or_default().push(CandidateRecord {
            task_id: s.task_id.clone(),
            source,
            variant,
            response: s.response.clone(),
            scores: Some(s.scores),
        });
    }
    let mut rng = perturb.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let mut pairs = Vec::new();
    let mut notes = Vec::new();
    for (task_id, pool) in pools {
        let item = format!("task `{task_id}`");
        let task = lookup(tasks, task_id, &item)?;
        let pair = select_pair(task, &pool, &format!("{task_id}:selected")).map_err(|e| pairgen_failure(&item, e))?;
        if let (Some((cfg, _)), Some(rng)) = (perturb, rng.as_mut()) {
            let id = format!("{task_id}:perturbed");
            match perturbed_pair(&id, task, &pair.positive, pair.scores_p, rng, cfg) {
                Ok(p) => {
                    pairs.push(PairRecord::from(&pair));
                    pairs.push(PairRecord::from(&p));
                    continue;
                }
                Err(e @ (PairgenError::NoConclusionValue | PairgenError::PerturbationInfeasible(_))) => {
                    notes.push(format!("{item}: perturbation skipped: {e}"));
                }
                Err(e) => return Err(pairgen_failure(&item, e)),
            }
        }
        pairs.push(PairRecord::from(&pair));
    }
    Ok((pairs, notes))
}

pub fn load_pairs(records: Vec<PairRecord>) -> Result<Vec<PreferencePair>, Failure> {
    records
        .into_iter()
        .map(|r| {
            let id = r.pair_id.clone();
            r.into_pair().map_err(|e| Failure::Input(format!("pair `{id}`: {e}")))
        })
        .collect()
}

fn fdpo_failure(e: FdpoError) -> Failure {
    match &e {
        FdpoError::Policy { pair_id, .. } if !pair_id.is_empty() => Failure::Input(format!("pair `{pair_id}`: {e}")),
        _ => Failure::Input(format!("training: {e}")),
    }
}

pub struct Trained {
    pub policy: BigramPolicy,
    pub report: TrainReport,
    pub train_pairs: usize,
    pub heldout_pairs: usize,
}

/// Seeded hold-out split, seeded initialization, then gradient descent.
pub fn train_policy(pairs: &[PreferencePair], cfg: &RunConfig, seed: u64) -> Result<Trained, Failure> {
    let fdpo = segpref_core::fdpo::FdpoConfig {
        seed,
        ..cfg.fdpo.clone()
    };
    let (train_pairs, heldout) = split_holdout(pairs, cfg.experiment.holdout_fraction, seed);
    if train_pairs.is_empty() {
        return Err(Failure::Input("training: no training pairs".into()));
    }
    let init = initial_policy(&train_pairs, &cfg.bigram, seed).map_err(fdpo_failure)?;
    let (policy, report) = train(&train_pairs, &heldout, &init, &fdpo).map_err(fdpo_failure)?;
    Ok(Trained {
        policy,
        report,
        train_pairs: train_pairs.len(),
        heldout_pairs: heldout.len(),
    })
}

/// Per task, the candidate the policy finds most likely per token.
pub fn rank_candidates(
    policy: &PolicyFile,
    parsed: &[ParsedRecord],
    tasks: &TaskMap,
) -> Result<Vec<PredictionRecord>, Failure> {
    let policy = policy
        .clone()
        .into_policy()
        .map_err(|e| Failure::Input(format!("policy: {e}")))?;
    let mut best: BTreeMap<&str, (f64, &ParsedRecord)> = BTreeMap::new();
    for p in parsed {
        let item = format!("response `{}`", p.id);
        let task = lookup(tasks, &p.task_id, &item)?;
        let enc = policy
            .encode(task, &p.response)
            .map_err(|e| Failure::Input(format!("{item}: {e}")))?;
        let score = policy.response_log_prob(&enc) / enc.tokens().len() as f64;
        let slot = best.entry(&p.task_id).or_insert((score, p));
        if score > slot.0 {
            *slot = (score, p);
        }
    }
    Ok(best
        .into_values()
        .map(|(_, p)| PredictionRecord {
            task_id: p.task_id.clone(),
            prediction: p.response.raw_text.clone(),
            id: Some(p.id.clone()),
        })
        .collect())
}

pub fn evaluate(predictions: &[PredictionRecord], tasks: &TaskMap) -> Result<EvalReport, Failure> {
    let mut outcomes = Vec::with_capacity(predictions.len());
    for p in predictions {
        let item = format!("prediction for task `{}`", p.task_id);
        let task = lookup(tasks, &p.task_id, &item)?;
        let truth = task
            .ground_truth
            .as_deref()
            .ok_or_else(|| Failure::Input(format!("{item}: task has no ground truth")))?;
        outcomes.push(evaluate_item(&p.task_id, &p.prediction, truth));
    }
    Ok(EvalReport {
        summary: summarize(&outcomes),
        outcomes,
    })
}

pub struct SearchResult {
    pub task_id: String,
    pub nodes: Vec<SearchNode>,
    /// Harvested paths as corpus records, best first.
    pub paths: Vec<ResponseRecord>,
}

/// Runs the tree search per task. A task without any complete path yields
/// an empty path list and a note.
pub fn run_search(
    tasks: &TaskMap,
    expanders: &[&dyn Expander],
    judge: &(dyn Judge + Sync),
    cfg: &SearchConfig,
) -> Result<(Vec<SearchResult>, Vec<String>), Failure> {
    let mut out = Vec::new();
    let mut notes = Vec::new();
    for (task_id, task) in tasks {
        let item = format!("task `{task_id}`");
        let outcome = match search(task, expanders, judge, cfg) {
            Ok(o) => o,
            Err(SearchError::NoCompletePath) => {
                notes.push(format!("{item}: no complete reasoning path"));
                continue;
            }
            Err(SearchError::Judge(e)) => return Err(judge_failure(&item, &e)),
            Err(e @ SearchError::ExpanderFailure { .. }) => return Err(Failure::External(format!("{item}: {e}"))),
            Err(e) => return Err(Failure::Input(format!("{item}: {e}"))),
        };
        let paths = outcome
            .paths
            .iter()
            .take(usize::from(u8::MAX))
            .enumerate()
            .map(|(rank, p)| {
                let text = render_longcot(&p.response).map_err(|e| Failure::Input(format!("{item}: {e}")))?;
                Ok(ResponseRecord {
                    id: format!("{task_id}:m3cts:{}", rank + 1),
                    task_id: task_id.clone(),
                    text,
                    source: Some(segpref_core::pairgen::CandidateSource::M3cts),
                    variant: Some(rank as u8 + 1),
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        out.push(SearchResult {
            task_id: task_id.clone(),
            nodes: outcome.tree.nodes().to_vec(),
            paths,
        });
    }
    Ok((out, notes))
}
