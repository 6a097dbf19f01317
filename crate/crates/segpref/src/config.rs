//! TOML run configuration. One section per concern; unknown keys are
//! rejected. Relative paths are resolved against the config file's
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use segpref_core::experiment::{ExperimentConfig, SWEEP_ALPHAS, SWEEP_LAMBDAS};
use segpref_core::fdpo::{BigramConfig, FdpoConfig};
use segpref_core::m3cts::SearchConfig;
use segpref_core::pairgen::PerturbConfig;
use segpref_core::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Mock,
    Replay,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeSection {
    pub backend: Backend,
    /// Mock scenes, one JSON object per line.
    pub scenes: Option<PathBuf>,
    /// Mock evaluator personas, a JSON list.
    pub personas: Option<PathBuf>,
    pub replay_dir: Option<PathBuf>,
    /// When set, every judge output is also written here as replay records.
    pub record_dir: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub concurrency: usize,
}

impl Default for JudgeSection {
    fn default() -> Self {
        JudgeSection {
            backend: Backend::Mock,
            scenes: None,
            personas: None,
            replay_dir: None,
            record_dir: None,
            endpoint: None,
            timeout_ms: 60_000,
            retries: 3,
            backoff_ms: 250,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub holdout_fraction: f64,
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub synthetic: SynthConfig,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            holdout_fraction: 0.2,
            alphas: SWEEP_ALPHAS.to_vec(),
            lambdas: SWEEP_LAMBDAS.to_vec(),
            synthetic: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParseSection {
    pub lenient: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub parse: ParseSection,
    pub judge: JudgeSection,
    pub fdpo: FdpoConfig,
    pub bigram: BigramConfig,
    pub search: SearchConfig,
    pub perturb: PerturbConfig,
    pub experiment: ExperimentSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.judge.scenes,
            &mut cfg.judge.personas,
            &mut cfg.judge.replay_dir,
            &mut cfg.judge.record_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<(), String> {
        self.fdpo.validate().map_err(|e| format!("[fdpo] {e}"))?;
        self.search.validate().map_err(|e| format!("[search] {e}"))?;
        let p = &self.perturb;
        if !(0.0 < p.min_fraction && p.min_fraction <= p.max_fraction && p.max_fraction < 1.0) {
            return Err(format!(
                "[perturb] band must satisfy 0 < min_fraction <= max_fraction < 1, got [{}, {}]",
                p.min_fraction, p.max_fraction
            ));
        }
        if !(p.validity_penalty >= 0.0 && p.validity_penalty.is_finite()) || p.max_attempts == 0 {
            return Err("[perturb] validity_penalty must be >= 0 and max_attempts > 0".into());
        }
        let h = self.experiment.holdout_fraction;
        if !(0.0..1.0).contains(&h) {
            return Err(format!("[experiment] holdout_fraction must be in [0, 1), got {h}"));
        }
        self.experiment
            .synthetic
            .validate()
            .map_err(|e| format!("[experiment.synthetic] {e}"))?;
        if !(3..=segpref_core::fdpo::MAX_VOCAB).contains(&self.bigram.vocab_size) || self.bigram.contexts == 0 {
            return Err(format!(
                "[bigram] vocab_size must be in 3..={} and contexts positive",
                segpref_core::fdpo::MAX_VOCAB
            ));
        }
        if self.judge.concurrency == 0 {
            return Err("[judge] concurrency must be positive".into());
        }
        Ok(())
    }

    pub fn experiment_config(&self, sweep: bool) -> ExperimentConfig {
        ExperimentConfig {
            fdpo: self.fdpo.clone(),
            bigram: self.bigram,
            holdout_fraction: self.experiment.holdout_fraction,
            sweep,
            alphas: self.experiment.alphas.clone(),
            lambdas: self.experiment.lambdas.clone(),
        }
    }
}
