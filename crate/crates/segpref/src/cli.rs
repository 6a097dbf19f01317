//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use segpref_core::experiment::{render_table, run_experiment};
use segpref_core::judge::mock::{MockJudge, Persona, Scene};
use segpref_core::judge::Judge;
use segpref_core::m3cts::{Expander, ScriptRecord, ScriptedExpander, SeededExpander, TemplateBank};
use segpref_core::pairgen::PairRecord;
use segpref_core::synth::synthetic_pairs;
use segpref_core::TaskInstance;

use crate::config::{Backend, JudgeSection, RunConfig};
use crate::io;
use crate::judge::{RecordingJudge, RemoteConfig, RemoteJudge, ReplayJudge};
use crate::pipeline::{self, TaskMap};
use crate::records::{ParsedRecord, PolicyFile, PredictionRecord, ResponseRecord, ScoredRecord, TreeRecord};
use crate::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "segpref",
    version,
    about = "Segment-level preference data, training and evaluation"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct JudgeArgs {
    #[arg(long, value_enum)]
    pub judge: Option<Backend>,
    /// Mock judge scenes (JSONL).
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Mock judge evaluator personas (JSON list).
    #[arg(long)]
    pub personas: Option<PathBuf>,
    #[arg(long)]
    pub replay_dir: Option<PathBuf>,
    /// Also write every judge output here as replay records.
    #[arg(long)]
    pub record_dir: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Raw responses (JSONL) to validated parsed responses.
    Parse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        lenient: bool,
    },
    /// Parsed responses plus a judge to scored responses.
    Score {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        judge: JudgeArgs,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Scored candidate pools to preference pairs.
    Pairs {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Add a conclusion-perturbed pair per task.
        #[arg(long)]
        perturb: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Multi-model tree search per task.
    Search {
        #[arg(long)]
        tasks: PathBuf,
        /// Scripted expander records (JSONL).
        #[arg(long)]
        script: Option<PathBuf>,
        /// Sentence bank (JSON) for seeded expanders.
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Ids of seeded expanders drawing from `--bank`.
        #[arg(long, value_delimiter = ',')]
        expanders: Vec<String>,
        /// Evaluator model ids.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long)]
        tree_out: PathBuf,
        /// Harvested paths as a response corpus (JSONL).
        #[arg(long)]
        paths_out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        judge: JudgeArgs,
    },
    /// Preference pairs to a trained bigram policy.
    Train {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        policy_out: PathBuf,
        #[arg(long)]
        metrics_out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Success rates of predictions against ground truth.
    Eval {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Prediction records (JSONL).
        #[arg(long, conflicts_with_all = ["policy", "candidates"])]
        predictions: Option<PathBuf>,
        /// Trained policy; picks one answer per task from `--candidates`.
        #[arg(long, requires = "candidates")]
        policy: Option<PathBuf>,
        #[arg(long, requires = "policy")]
        candidates: Option<PathBuf>,
    },
    /// DPO vs fDPO from identical initialization.
    Experiment(ExperimentArgs),
    /// The experiment plus the alpha/lambda grid.
    Sweep(ExperimentArgs),
    /// Synthetic preference pairs (JSONL).
    Synth {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Pair records; without it a synthetic corpus is generated.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Size of the synthetic corpus.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub output: PathBuf,
    /// Text table destination; printed to stdout either way.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

/// Parses `args`, runs the subcommand and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let cfg = match path {
        Some(p) => RunConfig::load(p).map_err(Failure::Input)?,
        None => RunConfig::default(),
    };
    Ok(cfg)
}

fn tasks(path: &Path) -> Result<TaskMap, Failure> {
    pipeline::task_map(io::read_jsonl::<TaskInstance>(path)?)
}

fn merge_judge(section: &JudgeSection, args: &JudgeArgs) -> JudgeSection {
    let mut s = section.clone();
    if let Some(b) = args.judge {
        s.backend = b;
    }
    for (slot, flag) in [
        (&mut s.scenes, &args.scenes),
        (&mut s.personas, &args.personas),
        (&mut s.replay_dir, &args.replay_dir),
        (&mut s.record_dir, &args.record_dir),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if args.endpoint.is_some() {
        s.endpoint.clone_from(&args.endpoint);
    }
    s
}

/// Builds the configured backend.
pub fn build_judge(s: &JudgeSection) -> Result<Box<dyn Judge + Sync>, Failure> {
    Ok(match s.backend {
        Backend::Mock => {
            let path = s
                .scenes
                .as_deref()
                .ok_or_else(|| Failure::Input("mock judge: `--scenes` (or [judge].scenes) is required".into()))?;
            let mut judge = MockJudge::new(io::read_jsonl::<Scene>(path)?);
            if let Some(p) = &s.personas {
                judge = judge.with_personas(io::read_json::<Vec<Persona>>(p)?);
            }
            Box::new(judge)
        }
        Backend::Replay => {
            let dir = s.replay_dir.as_deref().ok_or_else(|| {
                Failure::Input("replay judge: `--replay-dir` (or [judge].replay_dir) is required".into())
            })?;
            Box::new(ReplayJudge::load_dir(dir)?)
        }
        Backend::Remote => {
            let mut cfg = RemoteConfig::from_env(s.endpoint.as_deref()).map_err(Failure::Input)?;
            cfg.timeout = Duration::from_millis(s.timeout_ms);
            cfg.retries = s.retries;
            cfg.backoff = Duration::from_millis(s.backoff_ms);
            cfg.concurrency = s.concurrency;
            Box::new(RemoteJudge::new(cfg))
        }
    })
}

/// Runs `f` with the configured judge, recording its outputs when asked.
fn with_judge<R>(s: &JudgeSection, f: impl FnOnce(&(dyn Judge + Sync)) -> Result<R, Failure>) -> Result<R, Failure> {
    let base = build_judge(s)?;
    match &s.record_dir {
        None => f(&*base),
        Some(dir) => {
            let rec = RecordingJudge::new(&*base);
            let out = f(&rec);
            rec.write_dir(dir)?;
            out
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Parse { input, output, lenient } => {
            cfg.parse.lenient |= lenient;
            cfg.validate().map_err(Failure::Input)?;
            let parsed = pipeline::parse_corpus(&io::read_jsonl::<ResponseRecord>(&input)?, cfg.parse.lenient)?;
            for p in &parsed {
                for w in &p.warnings {
                    eprintln!("warning: response `{}`: {w}", p.id);
                }
            }
            io::write_jsonl(&output, &parsed)?;
            println!("parsed {} responses", parsed.len());
        }
        Command::Score {
            input,
            tasks: tasks_path,
            output,
            judge,
            jobs,
        } => {
            cfg.validate().map_err(Failure::Input)?;
            let section = merge_judge(&cfg.judge, &judge);
            let parsed = io::read_jsonl::<ParsedRecord>(&input)?;
            let tasks = tasks(&tasks_path)?;
            let scored = with_judge(&section, |j| pipeline::score_records(&parsed, &tasks, j, jobs))?;
            io::write_jsonl(&output, &scored)?;
            println!("scored {} responses", scored.len());
        }
        Command::Pairs {
            input,
            tasks: tasks_path,
            output,
            perturb,
            seed,
        } => {
            cfg.validate().map_err(Failure::Input)?;
            let seed = seed.or(cfg.seed).unwrap_or(0);
            let scored = io::read_jsonl::<ScoredRecord>(&input)?;
            let tasks = tasks(&tasks_path)?;
            let (pairs, notes) = pipeline::build_pairs(&scored, &tasks, perturb.then_some((&cfg.perturb, seed)))?;
            for n in notes {
                eprintln!("warning: {n}");
            }
            io::write_jsonl(&output, &pairs)?;
            println!("wrote {} pairs", pairs.len());
        }
        Command::Search {
            tasks: tasks_path,
            script,
            bank,
            expanders,
            models,
            tree_out,
            paths_out,
            seed,
            judge,
        } => {
            cfg.search.seed = seed;
            if !models.is_empty() {
                cfg.search.models = models;
            }
            cfg.validate().map_err(Failure::Input)?;
            let section = merge_judge(&cfg.judge, &judge);
            let tasks = tasks(&tasks_path)?;
            let mut scripted = Vec::new();
            if let Some(p) = &script {
                let records = io::read_jsonl::<ScriptRecord>(p)?;
                scripted = ScriptedExpander::from_records(&records)
                    .map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
            }
            let mut seeded = Vec::new();
            if !expanders.is_empty() {
                let p = bank
                    .as_deref()
                    .ok_or_else(|| Failure::Input("`--expanders` needs `--bank`".into()))?;
                let bank: TemplateBank = io::read_json(p)?;
                seeded = expanders
                    .iter()
                    .map(|id| SeededExpander::new(id.clone(), seed, bank.clone()))
                    .collect();
            }
            let all: Vec<&dyn Expander> = scripted
                .iter()
                .map(|e| e as &dyn Expander)
                .chain(seeded.iter().map(|e| e as &dyn Expander))
                .collect();
            if all.is_empty() {
                return Err(Failure::Input(
                    "search needs `--script` or `--bank` with `--expanders`".into(),
                ));
            }
            let (results, notes) = with_judge(&section, |j| pipeline::run_search(&tasks, &all, j, &cfg.search))?;
            for n in notes {
                eprintln!("warning: {n}");
            }
            let tree: Vec<TreeRecord> = results
                .iter()
                .flat_map(|r| {
                    r.nodes.iter().map(|node| TreeRecord {
                        task_id: &r.task_id,
                        node,
                    })
                })
                .collect();
            let paths: Vec<&ResponseRecord> = results.iter().flat_map(|r| &r.paths).collect();
            io::write_jsonl(&tree_out, &tree)?;
            io::write_jsonl(&paths_out, &paths)?;
            println!("searched {} tasks, harvested {} paths", results.len(), paths.len());
        }
        Command::Train {
            pairs,
            policy_out,
            metrics_out,
            seed,
            steps,
            alpha,
            lambda,
            beta,
        } => {
            if let Some(s) = steps {
                cfg.fdpo.steps = s;
            }
            if let Some(a) = alpha {
                cfg.fdpo.alpha = a;
            }
            if let Some(l) = lambda {
                cfg.fdpo.lambda = l;
            }
            if let Some(b) = beta {
                cfg.fdpo.beta = b;
            }
            cfg.validate().map_err(Failure::Input)?;
            let pairs = pipeline::load_pairs(io::read_jsonl::<PairRecord>(&pairs)?)?;
            let trained = pipeline::train_policy(&pairs, &cfg, seed)?;
            io::write_json(&policy_out, &PolicyFile::from_policy(&trained.policy))?;
            io::write_jsonl(&metrics_out, &trained.report.metrics)?;
            if let Some(last) = trained.report.last() {
                println!(
                    "trained on {} pairs ({} held out): loss {:.6}, acc_desc {:.4}, acc_reason {:.4}",
                    trained.train_pairs, trained.heldout_pairs, last.loss, last.acc_desc, last.acc_reason
                );
            }
        }
        Command::Eval {
            tasks: tasks_path,
            output,
            predictions,
            policy,
            candidates,
        } => {
            let tasks = tasks(&tasks_path)?;
            let preds = match (predictions, policy, candidates) {
                (Some(p), _, _) => io::read_jsonl::<PredictionRecord>(&p)?,
                (None, Some(policy), Some(cands)) => {
                    let policy: PolicyFile = io::read_json(&policy)?;
                    let parsed = io::read_jsonl::<ParsedRecord>(&cands)?;
                    pipeline::rank_candidates(&policy, &parsed, &tasks)?
                }
                _ => {
                    return Err(Failure::Input(
                        "eval needs `--predictions` or `--policy` with `--candidates`".into(),
                    ))
                }
            };
            let report = pipeline::evaluate(&preds, &tasks)?;
            io::write_json(&output, &report)?;
            let s = &report.summary;
            println!(
                "quantitative {}/{}  qualitative {}/{}",
                s.quantitative_success, s.quantitative_total, s.qualitative_success, s.qualitative_total
            );
        }
        Command::Experiment(args) => experiment(cfg, args, false)?,
        Command::Sweep(args) => experiment(cfg, args, true)?,
        Command::Synth { count, seed, output } => {
            if let Some(n) = count {
                cfg.experiment.synthetic.pairs = n;
            }
            cfg.validate().map_err(Failure::Input)?;
            let pairs = synthetic_pairs(&cfg.experiment.synthetic, seed);
            let records: Vec<PairRecord> = pairs.iter().map(PairRecord::from).collect();
            io::write_jsonl(&output, &records)?;
            println!("wrote {} synthetic pairs", records.len());
        }
    }
    Ok(())
}

fn experiment(mut cfg: RunConfig, args: ExperimentArgs, sweep: bool) -> Result<(), Failure> {
    if let Some(s) = args.seed.or(cfg.seed) {
        cfg.fdpo.seed = s;
    }
    if let Some(s) = args.steps {
        cfg.fdpo.steps = s;
    }
    if let Some(n) = args.synthetic {
        cfg.experiment.synthetic.pairs = n;
    }
    cfg.validate().map_err(Failure::Input)?;
    let pairs = match &args.pairs {
        Some(p) => pipeline::load_pairs(io::read_jsonl::<PairRecord>(p)?)?,
        None => synthetic_pairs(&cfg.experiment.synthetic, cfg.fdpo.seed),
    };
    let report = run_experiment(&pairs, &cfg.experiment_config(sweep))
        .map_err(|e| Failure::Input(format!("experiment: {e}")))?;
    io::write_json(&args.output, &report)?;
    let table = render_table(&report);
    if let Some(t) = &args.table {
        io::write_text(t, &table)?;
    }
    print!("{table}");
    Ok(())
}
