use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segpref_core::fdpo::{
    dpo_loss, fdpo_loss, segment_betas, segment_weights, BigramPolicy, FdpoConfig, PairOrigin, PolicyModel,
    PreferencePair, Vocabulary,
};
use segpref_core::{LongCoTResponse, SegmentScores, TaskInstance};

const WORDS: [&str; 10] = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];

fn random_text(rng: &mut ChaCha8Rng, len: usize) -> String {
    let mut out: Vec<&str> = (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
    if rng.gen::<f64>() < 0.2 {
        out.push("zz");
    }
    out.join(" ")
}

fn random_scores(rng: &mut ChaCha8Rng) -> SegmentScores {
    let mut r = || rng.gen_range(0.0..=4.0);
    SegmentScores::from_rewards(r(), r(), r(), r()).unwrap()
}

fn random_pair(rng: &mut ChaCha8Rng, i: usize) -> PreferencePair {
    let resp = |rng: &mut ChaCha8Rng| {
        let steps = (0..rng.gen_range(0..3)).map(|_| random_text(rng, 3)).collect();
        let n = rng.gen_range(1..6);
        let desc = random_text(rng, n);
        let n = rng.gen_range(1..4);
        let conclusion = random_text(rng, n);
        LongCoTResponse::new(desc, "", steps, conclusion)
    };
    let positive = resp(rng);
    let negative = resp(rng);
    PreferencePair::new(
        format!("p{i}"),
        TaskInstance::new(format!("t{}", rng.gen_range(0..5)), "q"),
        positive,
        negative,
        random_scores(rng),
        random_scores(rng),
        PairOrigin::Selected,
    )
}

fn random_policy(rng: &mut ChaCha8Rng, vocab: &Arc<Vocabulary>, contexts: usize, scale: f64) -> BigramPolicy {
    let n = BigramPolicy::num_params(vocab.len(), contexts);
    let params = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
    BigramPolicy::from_params(vocab.clone(), contexts, params).unwrap()
}

fn vocab() -> Arc<Vocabulary> {
    Arc::new(Vocabulary::new(WORDS.iter().map(|w| w.to_string())).unwrap())
}

fn random_cfg(rng: &mut ChaCha8Rng) -> FdpoConfig {
    FdpoConfig {
        beta: rng.gen_range(0.05..=1.0),
        alpha: rng.gen_range(0.0..=1.0),
        lambda: rng.gen_range(0.05..=2.0),
        ..FdpoConfig::default()
    }
}

/// Central differences on an O(1) loss with step 1e-4 carry roughly 1e-11
/// of rounding noise; below this size a component is compared absolutely.
const ROUNDOFF_FLOOR: f64 = 1e-8;

#[test]
fn analytic_gradient_matches_central_differences() {
    let v = vocab();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let contexts = rng.gen_range(1..4);
        let reference = random_policy(&mut rng, &v, contexts, 0.5);
        let mut policy = random_policy(&mut rng, &v, contexts, 0.5);
        let batch: Vec<PreferencePair> = (0..rng.gen_range(1..4)).map(|i| random_pair(&mut rng, i)).collect();
        let cfg = random_cfg(&mut rng);
        let (_, grad) = fdpo_loss(&batch, &policy, &reference, &cfg).unwrap();
        let base = policy.params().to_vec();
        for k in 0..base.len() {
            let mut shifted = base.clone();
            shifted[k] = base[k] + h;
            policy.set_params(&shifted).unwrap();
            let up = fdpo_loss(&batch, &policy, &reference, &cfg).unwrap().0;
            shifted[k] = base[k] - h;
            policy.set_params(&shifted).unwrap();
            let down = fdpo_loss(&batch, &policy, &reference, &cfg).unwrap().0;
            let numeric = (up - down) / (2.0 * h);
            let diff = (grad[k] - numeric).abs();
            let scale = grad[k].abs().max(numeric.abs());
            if scale > ROUNDOFF_FLOOR {
                worst = worst.max(diff / scale);
            } else {
                assert!(
                    diff <= ROUNDOFF_FLOOR,
                    "seed {seed}, param {k}: {} vs {numeric}",
                    grad[k]
                );
            }
        }
        policy.set_params(&base).unwrap();
    }
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

#[test]
fn zero_alpha_reduces_to_dpo() {
    let v = vocab();
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let contexts = rng.gen_range(1..4);
        let reference = random_policy(&mut rng, &v, contexts, 1.0);
        let policy = random_policy(&mut rng, &v, contexts, 1.0);
        let batch: Vec<PreferencePair> = (0..rng.gen_range(1..6)).map(|i| random_pair(&mut rng, i)).collect();
        let cfg = FdpoConfig {
            alpha: 0.0,
            ..random_cfg(&mut rng)
        };
        let (ours, _) = fdpo_loss(&batch, &policy, &reference, &cfg).unwrap();
        let plain = dpo_loss(&batch, &policy, &reference, cfg.beta).unwrap();
        assert!((ours - plain).abs() <= 1e-12, "seed {seed}: {ours} vs {plain}");
    }
}

#[test]
fn closed_form_weights_and_betas() {
    let (wd, wr) = segment_weights(1.0, 3.0, 0.6).unwrap();
    // Independent oracle: logistic of the scaled gap.
    let oracle = 1.0 / (1.0 + (-0.6f64 * (3.0 - 1.0)).exp());
    assert!((wr - oracle).abs() < 1e-15);
    assert!((wd - 0.231475).abs() < 1e-6 && (wr - 0.768525).abs() < 1e-6);
    let (bd, br) = segment_betas(0.1, 0.3, wd, wr).unwrap();
    assert!((bd - 0.0838885).abs() < 1e-7 && (br - 0.1161115).abs() < 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn betas_sum_to_twice_beta(
        beta in 1e-6f64..10.0,
        alpha in 0.0f64..=1.0,
        lambda in 1e-3f64..5.0,
        dd in -8.0f64..8.0,
        dr in -8.0f64..8.0,
    ) {
        let (wd, wr) = segment_weights(dd, dr, lambda).unwrap();
        let (bd, br) = segment_betas(beta, alpha, wd, wr).unwrap();
        prop_assert_eq!(bd + br, 2.0 * beta);
        prop_assert!(bd >= 0.0 && br >= 0.0);
    }

    #[test]
    fn weights_sum_to_one_in_range(a in -700.0f64..=700.0, b in -700.0f64..=700.0) {
        let (wd, wr) = segment_weights(a, b, 1.0).unwrap();
        prop_assert!((wd + wr - 1.0).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&wd) && (0.0..=1.0).contains(&wr));
        prop_assert_eq!(wd >= wr, a >= b || wd == wr);
    }
}
