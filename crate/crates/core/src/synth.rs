//! Synthetic preference corpora over a token-word vocabulary.
//!
//! Responses are strings of short words (`d3`, `r7`, ...). Positives carry
//! "good" marker words in their reasoning and sometimes in their description;
//! negatives carry "bad" markers in their reasoning. Score gaps are drawn so
//! the reasoning gap dominates the description gap.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fdpo::{PairOrigin, PreferencePair};
use crate::longcot::LongCoTResponse;
use crate::rewards::SegmentScores;
use crate::task::TaskInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub pairs: usize,
    pub tasks: usize,
    pub desc_words: usize,
    pub reason_words: usize,
    pub markers: usize,
    pub desc_len: usize,
    pub reason_len: usize,
    /// Marker words per reasoning segment.
    pub markers_per_reason: usize,
    /// Chance that a positive description carries a good marker.
    pub desc_marker_probability: f64,
    /// Description score gap is uniform in this range.
    pub desc_delta: (f64, f64),
    /// Reasoning score gap is uniform in this range.
    pub reason_delta: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pairs: 500,
            tasks: 16,
            desc_words: 10,
            reason_words: 14,
            markers: 4,
            desc_len: 6,
            reason_len: 8,
            markers_per_reason: 1,
            desc_marker_probability: 0.5,
            desc_delta: (0.0, 1.0),
            reason_delta: (2.0, 4.0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ordered(self.desc_delta) || !ordered(self.reason_delta) {
            return Err("delta ranges must be finite and ordered (low, high)".into());
        }
        if !(0.0..=1.0).contains(&self.desc_marker_probability) {
            return Err(format!(
                "desc_marker_probability must be in [0, 1], got {}",
                self.desc_marker_probability
            ));
        }
        if self.desc_len == 0 || self.reason_len == 0 {
            return Err("segment lengths must be positive".into());
        }
        Ok(())
    }
}

fn words(rng: &mut ChaCha8Rng, prefix: &str, pool: usize, len: usize) -> Vec<String> {
    (0..len)
        .map(|_| format!("{prefix}{}", rng.gen_range(0..pool.max(1))))
        .collect()
}

fn plant(rng: &mut ChaCha8Rng, seq: &mut [String], word: String) {
    if !seq.is_empty() {
        let at = rng.gen_range(0..seq.len());
        seq[at] = word;
    }
}

fn response(desc: &[String], reason: &[String]) -> LongCoTResponse {
    LongCoTResponse::new(desc.join(" "), "", alloc::vec![reason.join(" ")], "end")
}

pub fn synthetic_pairs(cfg: &SynthConfig, seed: u64) -> Vec<PreferencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.pairs);
    for i in 0..cfg.pairs {
        let task = TaskInstance::new(format!("synth-{:03}", i % cfg.tasks.max(1)), "synthetic");
        let mut desc_p = words(&mut rng, "d", cfg.desc_words, cfg.desc_len);
        let desc_l = words(&mut rng, "d", cfg.desc_words, cfg.desc_len);
        if rng.gen::<f64>() < cfg.desc_marker_probability {
            let m = format!("dg{}", rng.gen_range(0..cfg.markers.max(1)));
            plant(&mut rng, &mut desc_p, m);
        }
        let mut reason_p = words(&mut rng, "r", cfg.reason_words, cfg.reason_len);
        let mut reason_l = words(&mut rng, "r", cfg.reason_words, cfg.reason_len);
        for _ in 0..cfg.markers_per_reason {
            let g = format!("g{}", rng.gen_range(0..cfg.markers.max(1)));
            plant(&mut rng, &mut reason_p, g);
            let b = format!("b{}", rng.gen_range(0..cfg.markers.max(1)));
            plant(&mut rng, &mut reason_l, b);
        }
        let dd = rng.gen_range(cfg.desc_delta.0..=cfg.desc_delta.1);
        let dr = rng.gen_range(cfg.reason_delta.0..=cfg.reason_delta.1);
        let base = 1.0;
        let scores_l = SegmentScores::from_rewards(base, base, base, base).expect("constant rewards are in range");
        let clamp = |x: f64| x.clamp(0.0, crate::rewards::MAX_REWARD);
        let (hd, hr) = (clamp(base + dd / 2.0), clamp(base + dr / 2.0));
        let scores_p = SegmentScores::from_rewards(hd, hd, hr, hr).expect("clamped rewards are in range");
        out.push(PreferencePair::new(
            format!("synth-pair-{i:04}"),
            task,
            response(&desc_p, &reason_p),
            response(&desc_l, &reason_l),
            scores_p,
            scores_l,
            PairOrigin::Selected,
        ));
    }
    out
}
