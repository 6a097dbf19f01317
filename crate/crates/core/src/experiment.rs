//! DPO vs fDPO on the bigram policy, and the alpha/lambda grid.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fdpo::{train, BigramConfig, BigramPolicy, FdpoConfig, FdpoError, PreferencePair, StepMetrics, Vocabulary};
use crate::longcot::Segment;

pub const SWEEP_ALPHAS: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
pub const SWEEP_LAMBDAS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub fdpo: FdpoConfig,
    pub bigram: BigramConfig,
    /// Share of pairs held out for accuracy.
    pub holdout_fraction: f64,
    pub sweep: bool,
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            fdpo: FdpoConfig::default(),
            bigram: BigramConfig::default(),
            holdout_fraction: 0.2,
            sweep: false,
            alphas: SWEEP_ALPHAS.to_vec(),
            lambdas: SWEEP_LAMBDAS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub alpha: f64,
    pub lambda: f64,
    pub final_loss: f64,
    pub acc_desc: f64,
    pub acc_reason: f64,
    pub metrics: Vec<StepMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: f64,
    pub lambda: f64,
    pub final_loss: f64,
    pub acc_desc: f64,
    pub acc_reason: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub steps: usize,
    pub train_pairs: usize,
    pub heldout_pairs: usize,
    pub dpo: ArmReport,
    pub fdpo: ArmReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepCell>,
}

/// Seeded shuffle, then the first `ceil(fraction * n)` pairs are held out.
pub fn split_holdout(pairs: &[PreferencePair], fraction: f64, seed: u64) -> (Vec<PreferencePair>, Vec<PreferencePair>) {
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = libm::ceil(fraction.clamp(0.0, 1.0) * pairs.len() as f64) as usize;
    let held = held.min(pairs.len().saturating_sub(1));
    let heldout = idx[..held].iter().map(|&i| pairs[i].clone()).collect();
    let train = idx[held..].iter().map(|&i| pairs[i].clone()).collect();
    (train, heldout)
}

/// Seeded bigram policy over the training pairs' vocabulary.
pub fn initial_policy(train: &[PreferencePair], cfg: &BigramConfig, seed: u64) -> Result<BigramPolicy, FdpoError> {
    let texts = train.iter().flat_map(|p| {
        Segment::BOTH
            .into_iter()
            .flat_map(move |s| [p.positive.segment_text(s), p.negative.segment_text(s)])
    });
    let wrap = |source| FdpoError::Policy {
        pair_id: String::new(),
        source,
    };
    let vocab = Vocabulary::from_texts(texts, cfg.vocab_size).map_err(wrap)?;
    BigramPolicy::seeded(Arc::new(vocab), cfg, seed).map_err(wrap)
}

fn run_arm(
    name: &str,
    train_pairs: &[PreferencePair],
    heldout: &[PreferencePair],
    init: &BigramPolicy,
    cfg: &FdpoConfig,
) -> Result<ArmReport, FdpoError> {
    let (_, report) = train(train_pairs, heldout, init, cfg)?;
    let last = report.last().copied().ok_or(FdpoError::EmptyBatch)?;
    Ok(ArmReport {
        name: name.into(),
        alpha: cfg.alpha,
        lambda: cfg.lambda,
        final_loss: last.loss,
        acc_desc: last.acc_desc,
        acc_reason: last.acc_reason,
        metrics: report.metrics,
    })
}

/// Trains DPO (`alpha = 0`) and fDPO from the same initialization, data
/// split and step budget. With `sweep`, also trains every grid cell.
pub fn run_experiment(pairs: &[PreferencePair], cfg: &ExperimentConfig) -> Result<ExperimentReport, FdpoError> {
    cfg.fdpo.validate()?;
    let seed = cfg.fdpo.seed;
    let (train_pairs, heldout) = split_holdout(pairs, cfg.holdout_fraction, seed);
    if train_pairs.is_empty() {
        return Err(FdpoError::EmptyBatch);
    }
    let init = initial_policy(&train_pairs, &cfg.bigram, seed)?;
    let dpo_cfg = FdpoConfig {
        alpha: 0.0,
        ..cfg.fdpo.clone()
    };
    let dpo = run_arm("dpo", &train_pairs, &heldout, &init, &dpo_cfg)?;
    let fdpo = run_arm("fdpo", &train_pairs, &heldout, &init, &cfg.fdpo)?;
    let mut sweep = Vec::new();
    if cfg.sweep {
        for &alpha in &cfg.alphas {
            for &lambda in &cfg.lambdas {
                let cell_cfg = FdpoConfig {
                    alpha,
                    lambda,
                    ..cfg.fdpo.clone()
                };
                let arm = run_arm("cell", &train_pairs, &heldout, &init, &cell_cfg)?;
                sweep.push(SweepCell {
                    alpha,
                    lambda,
                    final_loss: arm.final_loss,
                    acc_desc: arm.acc_desc,
                    acc_reason: arm.acc_reason,
                });
            }
        }
    }
    Ok(ExperimentReport {
        seed,
        steps: cfg.fdpo.steps,
        train_pairs: train_pairs.len(),
        heldout_pairs: heldout.len(),
        dpo,
        fdpo,
        sweep,
    })
}

/// Aligned-column summary of a report.
pub fn render_table(report: &ExperimentReport) -> String {
    let mut out = format!(
        "seed {}  steps {}  train {}  held-out {}\n\n{:<6} {:>6} {:>7} {:>10} {:>9} {:>10}\n",
        report.seed,
        report.steps,
        report.train_pairs,
        report.heldout_pairs,
        "arm",
        "alpha",
        "lambda",
        "loss",
        "acc_desc",
        "acc_reason"
    );
    for arm in [&report.dpo, &report.fdpo] {
        out.push_str(&format!(
            "{:<6} {:>6.2} {:>7.2} {:>10.6} {:>9.4} {:>10.4}\n",
            arm.name, arm.alpha, arm.lambda, arm.final_loss, arm.acc_desc, arm.acc_reason
        ));
    }
    if !report.sweep.is_empty() {
        out.push_str(&format!(
            "\n{:>6} {:>7} {:>10} {:>9} {:>10}\n",
            "alpha", "lambda", "loss", "acc_desc", "acc_reason"
        ));
        for c in &report.sweep {
            out.push_str(&format!(
                "{:>6.2} {:>7.2} {:>10.6} {:>9.4} {:>10.4}\n",
                c.alpha, c.lambda, c.final_loss, c.acc_desc, c.acc_reason
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthetic_pairs, SynthConfig};

    fn small() -> (Vec<PreferencePair>, ExperimentConfig) {
        let pairs = synthetic_pairs(
            &SynthConfig {
                pairs: 40,
                ..SynthConfig::default()
            },
            1,
        );
        let cfg = ExperimentConfig {
            fdpo: FdpoConfig {
                steps: 5,
                ..FdpoConfig::default()
            },
            ..ExperimentConfig::default()
        };
        (pairs, cfg)
    }

    #[test]
    fn zero_steps_arms_agree() {
        let (pairs, mut cfg) = small();
        cfg.fdpo.steps = 0;
        let r = run_experiment(&pairs, &cfg).unwrap();
        assert_eq!(r.dpo.acc_reason, r.fdpo.acc_reason);
        assert_eq!(r.dpo.acc_desc, r.fdpo.acc_desc);
        assert_eq!(r.heldout_pairs, 8);
    }

    #[test]
    fn sweep_grid_and_determinism() {
        let (pairs, mut cfg) = small();
        cfg.sweep = true;
        let a = run_experiment(&pairs, &cfg).unwrap();
        assert_eq!(a.sweep.len(), 16);
        assert_eq!(a, run_experiment(&pairs, &cfg).unwrap());
        assert!(render_table(&a).lines().count() > 18);
    }
}
