//! Plain gradient-descent trainer.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    loss_over, prepare_pairs, prepared_loss, FdpoConfig, FdpoError, PolicyModel, PreferencePair, PreparedPair,
};
use crate::longcot::Segment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Mean training loss at this step's parameters.
    pub loss: f64,
    pub acc_desc: f64,
    pub acc_reason: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Step 0 is the initialization; one entry per update after that.
    pub metrics: Vec<StepMetrics>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&StepMetrics> {
        self.metrics.last()
    }
}

/// Fraction of pairs whose segment margin is strictly positive.
pub fn pairwise_accuracy<P: PolicyModel>(pairs: &[PreparedPair<P::Encoded>], policy: &P, segment: Segment) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let wins = pairs.iter().filter(|p| p.margin(policy, segment) > 0.0).count();
    wins as f64 / pairs.len() as f64
}

fn measure<P: PolicyModel>(
    step: usize,
    train: &[PreparedPair<P::Encoded>],
    eval: &[PreparedPair<P::Encoded>],
    policy: &P,
) -> Result<StepMetrics, FdpoError> {
    let (loss, _) = prepared_loss(train, policy, false)?;
    if !loss.is_finite() {
        return Err(FdpoError::NonFiniteLoss { step });
    }
    Ok(StepMetrics {
        step,
        loss,
        acc_desc: pairwise_accuracy(eval, policy, Segment::Desc),
        acc_reason: pairwise_accuracy(eval, policy, Segment::Reason),
    })
}

/// Trains a copy of `init` on `train_pairs`; `init` itself is the frozen
/// reference. Accuracy is measured on `heldout`, or on the training pairs
/// when `heldout` is empty.
pub fn train<P: PolicyModel + Clone>(
    train_pairs: &[PreferencePair],
    heldout: &[PreferencePair],
    init: &P,
    cfg: &FdpoConfig,
) -> Result<(P, TrainReport), FdpoError> {
    cfg.validate()?;
    if train_pairs.is_empty() {
        return Err(FdpoError::EmptyBatch);
    }
    let train = prepare_pairs(train_pairs, init, cfg)?;
    let held = prepare_pairs(heldout, init, cfg)?;
    let eval = if held.is_empty() { &train } else { &held };

    let mut policy = init.clone();
    let mut metrics = Vec::with_capacity(cfg.steps + 1);
    metrics.push(measure(0, &train, eval, &policy)?);

    let batch_size = if cfg.batch_size == 0 {
        train.len()
    } else {
        cfg.batch_size.min(train.len())
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cursor = order.len();
    let mut batch: Vec<usize> = Vec::with_capacity(batch_size);
    let full_batch = batch_size == train.len();

    for step in 1..=cfg.steps {
        let grad = if full_batch {
            prepared_loss(&train, &policy, true)?.1
        } else {
            batch.clear();
            for _ in 0..batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(order[cursor]);
                cursor += 1;
            }
            loss_over(batch.iter().map(|&i| &train[i]), &policy, true)?.1
        }
        .unwrap_or_default();
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(FdpoError::NonFiniteLoss { step });
        }
        let params: Vec<f64> = policy
            .params()
            .iter()
            .zip(&grad)
            .map(|(p, g)| p - cfg.learning_rate * g)
            .collect();
        policy.set_params(&params).map_err(|source| FdpoError::Policy {
            pair_id: alloc::string::String::new(),
            source,
        })?;
        metrics.push(measure(step, &train, eval, &policy)?);
    }
    Ok((policy, TrainReport { metrics }))
}
