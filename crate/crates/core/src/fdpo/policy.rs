//! Policy contract and the tabular bigram reference policy.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::longcot::{LongCoTResponse, Segment};
use crate::task::TaskInstance;
use crate::text;

pub const BOS: u32 = 0;
pub const UNK: u32 = 1;
pub const MAX_VOCAB: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("{0} segment has no tokens")]
    EmptySegment(Segment),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("expected {expected} parameters, got {found}")]
    ParamLength { expected: usize, found: usize },
}

/// What the trainer needs from a policy: segment log-probabilities and their
/// gradients in a flat parameter vector.
pub trait PolicyModel {
    /// A response prepared for repeated scoring.
    type Encoded;
    /// Gradient accumulator.
    type Grad;

    fn encode(&self, task: &TaskInstance, resp: &LongCoTResponse) -> Result<Self::Encoded, PolicyError>;
    /// `log pi(segment | task, earlier segments)`, finite and `<= 0`.
    fn segment_log_prob(&self, enc: &Self::Encoded, segment: Segment) -> f64;
    /// Log-probability of the whole response, computed without the segment
    /// split.
    fn response_log_prob(&self, enc: &Self::Encoded) -> f64;
    fn new_grad(&self) -> Self::Grad;
    /// Adds `scale * d/dtheta log pi(segment)` to `grad`.
    fn accumulate_segment_grad(&self, enc: &Self::Encoded, segment: Segment, scale: f64, grad: &mut Self::Grad);
    fn finish_grad(&self, grad: Self::Grad) -> Vec<f64>;
    fn params(&self) -> &[f64];
    fn set_params(&mut self, params: &[f64]) -> Result<(), PolicyError>;
    fn same_vocabulary(&self, other: &Self) -> bool;
}

/// Token list with `<bos>` at 0 and `<unk>` at 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = PolicyError;

    fn try_from(tokens: Vec<String>) -> Result<Self, PolicyError> {
        if tokens.first().map(String::as_str) != Some("<bos>") || tokens.get(1).map(String::as_str) != Some("<unk>") {
            return Err(PolicyError::InvalidVocabulary("must start with <bos>, <unk>".into()));
        }
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// `words` must be distinct and must not contain the special tokens.
    pub fn new(words: impl IntoIterator<Item = String>) -> Result<Self, PolicyError> {
        let mut tokens = vec!["<bos>".to_string(), "<unk>".to_string()];
        tokens.extend(words);
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self, PolicyError> {
        if tokens.len() > MAX_VOCAB {
            return Err(PolicyError::InvalidVocabulary(alloc::format!(
                "{} tokens exceed the limit of {MAX_VOCAB}",
                tokens.len()
            )));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(PolicyError::InvalidVocabulary(alloc::format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// The `size - 2` most frequent words of `texts`; ties go alphabetically.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, size: usize) -> Result<Self, PolicyError> {
        if !(3..=MAX_VOCAB).contains(&size) {
            return Err(PolicyError::InvalidVocabulary(alloc::format!(
                "size must be within 3..={MAX_VOCAB}, got {size}"
            )));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for w in text::words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        counts.remove("<bos>");
        counts.remove("<unk>");
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::new(ranked.into_iter().take(size - 2).map(|(w, _)| w))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        text::words(text).iter().map(|w| self.id(w)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BigramConfig {
    pub vocab_size: usize,
    pub contexts: usize,
    /// Initial parameters are uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for BigramConfig {
    fn default() -> Self {
        BigramConfig {
            vocab_size: 48,
            contexts: 4,
            init_scale: 0.1,
        }
    }
}

/// Sparse transition counts of one segment.
#[derive(Debug, Clone, Default, PartialEq)]
struct SegmentCounts {
    /// `(prev, next, count)`, sorted.
    transitions: Vec<(u32, u32, u32)>,
    /// `(prev, count)`, sorted.
    prev_totals: Vec<(u32, u32)>,
}

impl SegmentCounts {
    fn from_tokens(first_prev: u32, tokens: &[u32]) -> Self {
        let mut transitions: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut prev_totals: BTreeMap<u32, u32> = BTreeMap::new();
        let mut prev = first_prev;
        for &t in tokens {
            *transitions.entry((prev, t)).or_default() += 1;
            *prev_totals.entry(prev).or_default() += 1;
            prev = t;
        }
        SegmentCounts {
            transitions: transitions.into_iter().map(|((p, n), c)| (p, n, c)).collect(),
            prev_totals: prev_totals.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BigramEncoded {
    ctx: usize,
    /// Description tokens followed by reasoning tokens.
    tokens: Vec<u32>,
    segments: [SegmentCounts; 2],
}

impl BigramEncoded {
    pub fn context(&self) -> usize {
        self.ctx
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }
}

#[derive(Debug, Clone)]
pub struct BigramGrad {
    dense: Vec<f64>,
    /// Pending `-coef * softmax(row)` terms, per `(prev, ctx)`.
    row_coef: Vec<f64>,
}

/// Autoregressive bigram model conditioned on a task context symbol:
/// `logit(next | prev, ctx) = W[prev][next] + U[ctx][next]`.
///
/// The reasoning segment continues from the last description token, so the
/// two segment log-probabilities add up to the response log-probability.
#[derive(Debug, Clone)]
pub struct BigramPolicy {
    vocab: Arc<Vocabulary>,
    contexts: usize,
    params: Vec<f64>,
    /// Log-softmax table indexed `[prev][ctx][next]`.
    log_probs: Vec<f64>,
}

impl BigramPolicy {
    pub fn num_params(vocab_len: usize, contexts: usize) -> usize {
        vocab_len * vocab_len + contexts * vocab_len
    }

    pub fn from_params(vocab: Arc<Vocabulary>, contexts: usize, params: Vec<f64>) -> Result<Self, PolicyError> {
        if contexts == 0 {
            return Err(PolicyError::InvalidVocabulary("need at least one context".into()));
        }
        let expected = Self::num_params(vocab.len(), contexts);
        if params.len() != expected {
            return Err(PolicyError::ParamLength {
                expected,
                found: params.len(),
            });
        }
        let mut policy = BigramPolicy {
            vocab,
            contexts,
            params,
            log_probs: Vec::new(),
        };
        policy.rebuild_table();
        Ok(policy)
    }

    /// Seeded uniform initialization.
    pub fn seeded(vocab: Arc<Vocabulary>, cfg: &BigramConfig, seed: u64) -> Result<Self, PolicyError> {
        let n = Self::num_params(vocab.len(), cfg.contexts);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = cfg.init_scale;
        let params = (0..n)
            .map(|_| {
                if scale > 0.0 {
                    rng.gen_range(-scale..=scale)
                } else {
                    0.0
                }
            })
            .collect();
        Self::from_params(vocab, cfg.contexts, params)
    }

    pub fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn context_of(&self, task_id: &str) -> usize {
        (text::fnv1a(task_id.as_bytes()) % self.contexts as u64) as usize
    }

    fn v(&self) -> usize {
        self.vocab.len()
    }

    fn w_index(&self, prev: usize, next: usize) -> usize {
        prev * self.v() + next
    }

    fn u_index(&self, ctx: usize, next: usize) -> usize {
        self.v() * self.v() + ctx * self.v() + next
    }

    fn row(&self, prev: usize, ctx: usize) -> &[f64] {
        let v = self.v();
        let start = (prev * self.contexts + ctx) * v;
        &self.log_probs[start..start + v]
    }

    fn rebuild_table(&mut self) {
        let (v, c) = (self.v(), self.contexts);
        let mut table = vec![0.0; v * c * v];
        let mut logits = vec![0.0; v];
        for prev in 0..v {
            for ctx in 0..c {
                for (next, l) in logits.iter_mut().enumerate() {
                    *l = self.params[self.w_index(prev, next)] + self.params[self.u_index(ctx, next)];
                }
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| libm::exp(l - m)).sum();
                let lse = m + libm::log(z);
                let start = (prev * c + ctx) * v;
                for (slot, l) in table[start..start + v].iter_mut().zip(&logits) {
                    *slot = l - lse;
                }
            }
        }
        self.log_probs = table;
    }

    /// `p(. | prev, ctx)`.
    pub fn next_token_distribution(&self, prev: u32, ctx: usize) -> Vec<f64> {
        self.row(prev as usize, ctx).iter().map(|l| libm::exp(*l)).collect()
    }

    /// Log-probability of `tokens` after `<bos>`, straight from the
    /// parameters.
    pub fn sequence_log_prob(&self, ctx: usize, tokens: &[u32]) -> f64 {
        let v = self.v();
        let mut prev = BOS as usize;
        let mut total = 0.0;
        for &t in tokens {
            let logit = |k: usize| self.params[prev * v + k] + self.params[v * v + ctx * v + k];
            let m = (0..v).map(logit).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..v).map(|k| libm::exp(logit(k) - m)).sum();
            total += logit(t as usize) - m - libm::log(z);
            prev = t as usize;
        }
        total
    }

    pub fn encode_parts(&self, task_id: &str, desc: &str, reason: &str) -> Result<BigramEncoded, PolicyError> {
        let d = self.vocab.tokenize(desc);
        let r = self.vocab.tokenize(reason);
        if d.is_empty() {
            return Err(PolicyError::EmptySegment(Segment::Desc));
        }
        if r.is_empty() {
            return Err(PolicyError::EmptySegment(Segment::Reason));
        }
        let last_desc = *d.last().unwrap_or(&BOS);
        let segments = [
            SegmentCounts::from_tokens(BOS, &d),
            SegmentCounts::from_tokens(last_desc, &r),
        ];
        let mut tokens = d;
        tokens.extend(r);
        Ok(BigramEncoded {
            ctx: self.context_of(task_id),
            tokens,
            segments,
        })
    }
}

fn seg_counts(enc: &BigramEncoded, segment: Segment) -> &SegmentCounts {
    match segment {
        Segment::Desc => &enc.segments[0],
        Segment::Reason => &enc.segments[1],
    }
}

impl PolicyModel for BigramPolicy {
    type Encoded = BigramEncoded;
    type Grad = BigramGrad;

    fn encode(&self, task: &TaskInstance, resp: &LongCoTResponse) -> Result<BigramEncoded, PolicyError> {
        self.encode_parts(&task.task_id, &resp.desc_segment, &resp.reason_segment)
    }

    fn segment_log_prob(&self, enc: &BigramEncoded, segment: Segment) -> f64 {
        seg_counts(enc, segment)
            .transitions
            .iter()
            .map(|&(p, n, c)| f64::from(c) * self.row(p as usize, enc.ctx)[n as usize])
            .sum()
    }

    fn response_log_prob(&self, enc: &BigramEncoded) -> f64 {
        self.sequence_log_prob(enc.ctx, &enc.tokens)
    }

    fn new_grad(&self) -> BigramGrad {
        BigramGrad {
            dense: vec![0.0; self.params.len()],
            row_coef: vec![0.0; self.v() * self.contexts],
        }
    }

    fn accumulate_segment_grad(&self, enc: &BigramEncoded, segment: Segment, scale: f64, grad: &mut BigramGrad) {
        let counts = seg_counts(enc, segment);
        for &(p, n, c) in &counts.transitions {
            let g = scale * f64::from(c);
            grad.dense[self.w_index(p as usize, n as usize)] += g;
            grad.dense[self.u_index(enc.ctx, n as usize)] += g;
        }
        for &(p, c) in &counts.prev_totals {
            grad.row_coef[p as usize * self.contexts + enc.ctx] += scale * f64::from(c);
        }
    }

    fn finish_grad(&self, grad: BigramGrad) -> Vec<f64> {
        let BigramGrad { mut dense, row_coef } = grad;
        let v = self.v();
        for prev in 0..v {
            for ctx in 0..self.contexts {
                let coef = row_coef[prev * self.contexts + ctx];
                if coef == 0.0 {
                    continue;
                }
                for (next, lp) in self.row(prev, ctx).iter().enumerate() {
                    let g = coef * libm::exp(*lp);
                    dense[prev * v + next] -= g;
                    dense[v * v + ctx * v + next] -= g;
                }
            }
        }
        dense
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, params: &[f64]) -> Result<(), PolicyError> {
        if params.len() != self.params.len() {
            return Err(PolicyError::ParamLength {
                expected: self.params.len(),
                found: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        self.rebuild_table();
        Ok(())
    }

    fn same_vocabulary(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.vocab, &other.vocab) || self.vocab.tokens == other.vocab.tokens)
            && self.contexts == other.contexts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BigramPolicy {
        let vocab = Arc::new(Vocabulary::new(["a".to_string()]).unwrap());
        // 3 tokens, 1 context: 9 + 3 parameters.
        let params = vec![0.0, 0.5, -0.5, 0.2, 0.1, 0.3, -1.0, 0.7, 0.0, 0.1, 0.0, -0.2];
        BigramPolicy::from_params(vocab, 1, params).unwrap()
    }

    #[test]
    fn distributions_are_normalized() {
        let vocab = Arc::new(Vocabulary::new((0..20).map(|i| alloc::format!("w{i}"))).unwrap());
        let policy = BigramPolicy::seeded(
            vocab,
            &BigramConfig {
                init_scale: 3.0,
                ..BigramConfig::default()
            },
            9,
        )
        .unwrap();
        for prev in 0..policy.v() as u32 {
            for ctx in 0..policy.contexts() {
                let s: f64 = policy.next_token_distribution(prev, ctx).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn brute_force_sequence_probability() {
        let policy = tiny();
        let p = &policy.params;
        let prob = |prev: usize, next: usize| {
            let e: Vec<f64> = (0..3).map(|k| libm::exp(p[prev * 3 + k] + p[9 + k])).collect();
            e[next] / e.iter().sum::<f64>()
        };
        // "a a" then "zzz a": unknown words map to <unk>.
        let enc = policy.encode_parts("t", "a a", "zzz a").unwrap();
        assert_eq!(enc.tokens(), &[2, 2, 1, 2]);
        let desc = prob(0, 2) * prob(2, 2);
        let reason = prob(2, 1) * prob(1, 2);
        assert!((policy.segment_log_prob(&enc, Segment::Desc) - libm::log(desc)).abs() < 1e-12);
        assert!((policy.segment_log_prob(&enc, Segment::Reason) - libm::log(reason)).abs() < 1e-12);
        assert!((policy.response_log_prob(&enc) - libm::log(desc * reason)).abs() < 1e-12);
    }

    #[test]
    fn empty_segments_and_vocab_limits() {
        let policy = tiny();
        assert_eq!(
            policy.encode_parts("t", "", "a").unwrap_err(),
            PolicyError::EmptySegment(Segment::Desc)
        );
        assert!(Vocabulary::new((0..63).map(|i| alloc::format!("w{i}"))).is_err());
        let v = Vocabulary::from_texts(["b a a c c c"], 4).unwrap();
        assert_eq!(v.tokens(), &["<bos>", "<unk>", "c", "a"]);
    }
}
